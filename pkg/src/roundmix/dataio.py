"""CSV ingestion and the delimited outputs shared by the CLI commands.

Data files are plain CSV with a header row naming every schema column
(extra columns are ignored).  Invalid rows are rejected individually —
each with a one-line reason — rather than aborting the whole file; the
file itself is rejected only when it is empty, missing a column, or
loses more than half of its rows.  Numbers are written back with 17
significant digits so a read-write cycle is lossless.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .schema import MixedPoint, MixedSchema, SchemaError

__all__ = ["DataError", "Dataset", "ingest", "write_points_csv", "write_table"]


class DataError(RuntimeError):
    """The data file as a whole cannot be used."""


@dataclass(eq=False)
class Dataset:
    """Schema-valid rows of one ingested file, plus provenance.

    ``digest`` is the SHA-256 of the raw file bytes, so identical files
    hash identically regardless of parsing.  ``rejected`` holds one
    reason line per dropped row.
    """

    schema: MixedSchema
    points: list[MixedPoint]
    digest: str
    rejected: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.points)


def _column_layout(schema: MixedSchema) -> list[str]:
    if schema.column_order:
        return list(schema.column_order)
    return list(schema.cont_names) + list(schema.disc_names)


def ingest(path, schema: MixedSchema) -> Dataset:
    """Read a CSV file of observations against a schema.

    Raises
    ------
    DataError
        When the header misses a schema column, the file has no data
        rows, or more than half of the rows are rejected.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    digest = hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8-sig")
    reader = csv.reader(text.splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    missing = [
        name
        for name in (*schema.cont_names, *schema.disc_names)
        if name not in header
    ]
    if missing:
        raise DataError(f"{path}: header missing column(s) {', '.join(missing)}")
    col = {name: header.index(name) for name in header}

    points: list[MixedPoint] = []
    rejected: list[str] = []
    n_data = 0
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        n_data += 1
        try:
            y1 = np.array(
                [float(row[col[name]]) for name in schema.cont_names], dtype=float
            )
            y2 = np.empty(schema.p2, dtype=np.int64)
            for j, name in enumerate(schema.disc_names):
                cellv = row[col[name]].strip()
                value = float(cellv)
                if value != int(value):
                    raise ValueError(f"column {name!r}: non-integer level {cellv!r}")
                y2[j] = int(value)
        except (ValueError, IndexError) as exc:
            rejected.append(f"line {line_no}: {exc}")
            continue
        point = MixedPoint(y1=y1, y2=y2)
        try:
            point.check_against(schema)
        except SchemaError as exc:
            rejected.append(f"line {line_no}: {exc}")
            continue
        points.append(point)

    if n_data == 0:
        raise DataError(f"{path}: no data rows")
    if len(rejected) * 2 > n_data:
        preview = "; ".join(rejected[:5])
        raise DataError(
            f"{path}: {len(rejected)} of {n_data} rows rejected ({preview})"
        )
    return Dataset(schema=schema, points=points, digest=digest, rejected=rejected)


def write_points_csv(path, schema: MixedSchema, points: list[MixedPoint]) -> None:
    """Write observations in the schema's column order (17 digits)."""
    cont_idx = {name: j for j, name in enumerate(schema.cont_names)}
    disc_idx = {name: j for j, name in enumerate(schema.disc_names)}
    layout = _column_layout(schema)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(layout)
        for point in points:
            row = []
            for name in layout:
                if name in cont_idx:
                    row.append(format(float(point.y1[cont_idx[name]]), ".17g"))
                else:
                    row.append(str(int(point.y2[disc_idx[name]])))
            writer.writerow(row)


def write_table(path, header: list[str], rows) -> None:
    """Generic CSV writer: floats at 17 digits, everything else as str."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    format(v, ".17g") if isinstance(v, float) else str(v)
                    for v in row
                ]
            )
