"""Mixed-scale data model: coordinate roles, level partitions, monotone maps.

A schema declares, for every coordinate of an observation, whether it is
continuous or discrete, how discrete levels partition the latent real line,
and which monotone map links each continuous coordinate to its latent axis.
Points are handled continuous-block-first: ``y = (y1, y2)`` where ``y1`` holds
the real-valued coordinates and ``y2`` the nonnegative integer levels.

Partition cells are half-open ``[t_k, t_{k+1})`` with an implicit leftmost cut
at minus infinity, so the cells of one coordinate tile the whole real line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SchemaError",
    "MonotoneMap",
    "PartitionSpec",
    "MixedSchema",
    "MixedPoint",
    "Cell",
    "cell_of",
    "latent_of_continuous",
    "forward_continuous",
    "validate_schema",
    "schema_from_dict",
    "schema_to_dict",
    "load_schema",
    "save_schema",
]

#: Relative tolerance for map round trips (forward then inverse).
MAP_ROUNDTRIP_RTOL = 1e-12

#: Absolute tolerance for continuous-block round trips through the schema.
LATENT_ROUNDTRIP_ATOL = 1e-10


class SchemaError(ValueError):
    """A schema, point, or level index violates the data model."""


# ---------------------------------------------------------------------------
# Monotone maps for continuous coordinates
# ---------------------------------------------------------------------------

IDENTITY = "identity"
AFFINE = "affine"
LOG = "log"

_MAP_KINDS = (IDENTITY, AFFINE, LOG)


@dataclass(frozen=True)
class MonotoneMap:
    """Monotone link between one latent axis and one observed coordinate.

    ``forward`` carries latent values to the observed scale, ``inverse``
    undoes it.  Three variants exist: ``identity``, ``affine`` (with nonzero
    ``scale`` and arbitrary ``shift``), and ``log`` (observed values are
    positive, latent values their logarithms).  Increasing orientation is the
    canonical form; an affine map with negative scale is accepted and handled
    exactly through absolute Jacobians.
    """

    kind: str = IDENTITY
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _MAP_KINDS:
            raise SchemaError(f"unknown map kind {self.kind!r}")

    def forward(self, u):
        """Map latent values to the observed scale."""
        if self.kind == IDENTITY:
            return np.asarray(u, dtype=float)
        if self.kind == AFFINE:
            return self.scale * np.asarray(u, dtype=float) + self.shift
        return np.exp(u)

    def inverse(self, y):
        """Map observed values back to the latent axis."""
        if self.kind == IDENTITY:
            return np.asarray(y, dtype=float)
        if self.kind == AFFINE:
            return (np.asarray(y, dtype=float) - self.shift) / self.scale
        return np.log(y)

    def log_abs_dinverse(self, y):
        """Log absolute derivative of the inverse map at observed value(s)."""
        y = np.asarray(y, dtype=float)
        if self.kind == IDENTITY:
            return np.zeros_like(y)
        if self.kind == AFFINE:
            return np.full_like(y, -math.log(abs(self.scale)))
        return -np.log(y)

    def in_range(self, y) -> bool:
        """Whether observed value(s) lie in the map's range."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            return False
        if self.kind == LOG:
            return bool(np.all(y > 0.0))
        return True

    def describe(self) -> str:
        if self.kind == AFFINE:
            return f"affine(scale={self.scale:g}, shift={self.shift:g})"
        return self.kind


# ---------------------------------------------------------------------------
# Level partitions for discrete coordinates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    """Ordered partition of the real line into half-open cells.

    Exactly one of two representations is set: ``cuts`` lists the finite
    thresholds of a coordinate with finitely many levels (``len(cuts) + 1``
    cells), while ``rule = (start, step)`` generates unboundedly many cuts
    ``t_k = start + (k - 1) * step`` for ``k >= 1``, as used for counts.
    Level ``k`` occupies ``[t_k, t_{k+1})`` with ``t_0 = -inf``.
    """

    cuts: tuple[float, ...] | None = None
    rule: tuple[float, float] | None = None

    @classmethod
    def from_cuts(cls, cuts: Iterable[float]) -> "PartitionSpec":
        return cls(cuts=tuple(float(c) for c in cuts))

    @classmethod
    def counting(cls, start: float = 0.0, step: float = 1.0) -> "PartitionSpec":
        """Unbounded partition for count data; the default gives cells
        ``(-inf, 0), [0, 1), [1, 2), ...`` so level ``y`` sits on ``[y-1, y)``."""
        return cls(rule=(float(start), float(step)))

    def __post_init__(self) -> None:
        if (self.cuts is None) == (self.rule is None):
            raise SchemaError("exactly one of cuts or rule must be given")

    @property
    def unbounded(self) -> bool:
        return self.rule is not None

    @property
    def n_levels(self) -> int | None:
        """Number of cells, or None when the partition is unbounded."""
        if self.cuts is None:
            return None
        return len(self.cuts) + 1

    def cut(self, k: int) -> float:
        """The k-th threshold, with ``t_0 = -inf``."""
        if k <= 0:
            return -math.inf
        if self.cuts is not None:
            if k > len(self.cuts):
                return math.inf
            return self.cuts[k - 1]
        start, step = self.rule
        return start + (k - 1) * step

    def bounds(self, level: int) -> tuple[float, float]:
        """Half-open cell ``[lo, hi)`` of a level."""
        if level < 0:
            raise SchemaError(f"negative level {level}")
        if self.cuts is not None and level > len(self.cuts):
            raise SchemaError(
                f"level {level} out of range for {len(self.cuts) + 1} cells"
            )
        return self.cut(level), self.cut(level + 1)

    def level_of(self, x):
        """Level index of latent value(s); vectorized."""
        x = np.asarray(x, dtype=float)
        if self.cuts is not None:
            return np.searchsorted(np.asarray(self.cuts), x, side="right")
        start, step = self.rule
        lev = np.floor((x - start) / step).astype(np.int64) + 1
        return np.where(x < start, 0, np.maximum(lev, 1))

    def check(self) -> list[str]:
        problems = []
        if self.cuts is not None:
            arr = np.asarray(self.cuts, dtype=float)
            if arr.size == 0:
                problems.append("empty cut list")
            elif not np.all(np.isfinite(arr)):
                problems.append("non-finite cut")
            elif np.any(np.diff(arr) <= 0):
                problems.append("cuts not strictly increasing")
        else:
            start, step = self.rule
            if not (math.isfinite(start) and math.isfinite(step)):
                problems.append("non-finite cut rule")
            elif step <= 0:
                problems.append("cut rule step must be positive")
        return problems


# ---------------------------------------------------------------------------
# Schema, points, cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixedSchema:
    """Coordinate layout of one mixed-scale data set.

    ``cont_maps`` and ``partitions`` fix the dimensions ``p1`` (continuous)
    and ``p2`` (discrete).  Names identify columns in data files;
    ``column_order`` remembers the user's original interleaving for I/O, while
    all numeric work uses the continuous-block-first layout.
    """

    cont_maps: tuple[MonotoneMap, ...] = ()
    partitions: tuple[PartitionSpec, ...] = ()
    cont_names: tuple[str, ...] = ()
    disc_names: tuple[str, ...] = ()
    column_order: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "cont_maps", tuple(self.cont_maps))
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if not self.cont_names:
            object.__setattr__(
                self,
                "cont_names",
                tuple(f"x{i + 1}" for i in range(len(self.cont_maps))),
            )
        else:
            object.__setattr__(self, "cont_names", tuple(self.cont_names))
        if not self.disc_names:
            object.__setattr__(
                self,
                "disc_names",
                tuple(f"d{i + 1}" for i in range(len(self.partitions))),
            )
        else:
            object.__setattr__(self, "disc_names", tuple(self.disc_names))
        if not self.column_order:
            object.__setattr__(
                self, "column_order", self.cont_names + self.disc_names
            )
        else:
            object.__setattr__(self, "column_order", tuple(self.column_order))
        if self.p == 0:
            raise SchemaError("schema has no coordinates")

    @property
    def p1(self) -> int:
        return len(self.cont_maps)

    @property
    def p2(self) -> int:
        return len(self.partitions)

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def levels(self) -> tuple[int | None, ...]:
        """Level counts per discrete coordinate (None = unbounded)."""
        return tuple(part.n_levels for part in self.partitions)

    def kind_of(self, j: int) -> str:
        """Conventional kind label of discrete coordinate ``j``."""
        q = self.partitions[j].n_levels
        if q is None:
            return "count"
        return "binary" if q == 2 else "categorical"


@dataclass(eq=False)
class Cell:
    """Axis-aligned half-open box ``prod_j [lower_j, upper_j)`` in latent space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise SchemaError("cell bounds must be 1-d arrays of equal length")
        if np.any(self.lower >= self.upper):
            raise SchemaError("cell has empty side (lower >= upper)")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x < self.upper))


@dataclass(eq=False)
class MixedPoint:
    """One observation split into its continuous and discrete blocks."""

    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self) -> None:
        self.y1 = np.atleast_1d(np.asarray(self.y1, dtype=float))
        self.y2 = np.atleast_1d(np.asarray(self.y2, dtype=np.int64))

    def check_against(self, schema: MixedSchema) -> None:
        """Raise :class:`SchemaError` if the point does not fit the schema."""
        if self.y1.size != schema.p1:
            raise SchemaError(
                f"continuous block has {self.y1.size} coords, schema wants {schema.p1}"
            )
        if self.y2.size != schema.p2:
            raise SchemaError(
                f"discrete block has {self.y2.size} coords, schema wants {schema.p2}"
            )
        for j, (name, m) in enumerate(zip(schema.cont_names, schema.cont_maps)):
            if not m.in_range(self.y1[j]):
                raise SchemaError(
                    f"coordinate {name!r}: value {self.y1[j]!r} outside range of {m.describe()}"
                )
        cell_of(schema, self.y2)  # validates levels


def cell_of(schema: MixedSchema, y2) -> Cell:
    """Latent cell of a discrete outcome.

    Raises
    ------
    SchemaError
        If a level is negative, non-integer, or at/above the level count of a
        finite coordinate; the message names the offending coordinate.
    """
    y2 = np.atleast_1d(np.asarray(y2))
    if y2.size != schema.p2:
        raise SchemaError(f"expected {schema.p2} discrete coords, got {y2.size}")
    if y2.size and not np.issubdtype(y2.dtype, np.integer):
        if np.any(y2 != np.floor(y2)):
            raise SchemaError("discrete levels must be integers")
        y2 = y2.astype(np.int64)
    lower = np.empty(schema.p2)
    upper = np.empty(schema.p2)
    for j, part in enumerate(schema.partitions):
        lev = int(y2[j])
        name = schema.disc_names[j]
        if lev < 0:
            raise SchemaError(f"coordinate {name!r}: negative level {lev}")
        q = part.n_levels
        if q is not None and lev >= q:
            raise SchemaError(
                f"coordinate {name!r}: level {lev} out of range (levels 0..{q - 1})"
            )
        lower[j], upper[j] = part.bounds(lev)
    return Cell(lower, upper)


def latent_of_continuous(schema: MixedSchema, y1) -> tuple[np.ndarray, float]:
    """Invert the continuous block and accumulate the log-Jacobian.

    Returns the latent continuous block ``u`` with ``h(u) = y1`` and the sum
    of log absolute derivatives of the inverse maps at ``y1``.  Values outside
    a map's range raise :class:`SchemaError` naming the coordinate.
    """
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    if y1.size != schema.p1:
        raise SchemaError(f"expected {schema.p1} continuous coords, got {y1.size}")
    u = np.empty(schema.p1)
    log_jac = 0.0
    for j, m in enumerate(schema.cont_maps):
        if not m.in_range(y1[j]):
            raise SchemaError(
                f"coordinate {schema.cont_names[j]!r}: value {y1[j]!r} outside "
                f"range of {m.describe()}"
            )
        u[j] = m.inverse(y1[j])
        log_jac += float(m.log_abs_dinverse(y1[j]))
    return u, log_jac


def forward_continuous(schema: MixedSchema, u) -> np.ndarray:
    """Push latent continuous block(s) to the observed scale (vectorized)."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    for j, m in enumerate(schema.cont_maps):
        out[..., j] = m.forward(u[..., j])
    return out


def validate_schema(schema: MixedSchema) -> list[str]:
    """Collect human-readable diagnostics; an empty list means valid."""
    problems: list[str] = []
    if len(schema.cont_names) != schema.p1:
        problems.append("continuous name count does not match map count")
    if len(schema.disc_names) != schema.p2:
        problems.append("discrete name count does not match partition count")
    names = list(schema.cont_names) + list(schema.disc_names)
    if len(set(names)) != len(names):
        problems.append("duplicate column names")
    if set(schema.column_order) != set(names) or len(schema.column_order) != len(names):
        problems.append("column_order is not a permutation of the column names")
    for name, m in zip(schema.cont_names, schema.cont_maps):
        if m.kind == AFFINE and m.scale == 0.0:
            problems.append(f"coordinate {name!r}: degenerate map (zero scale)")
    for name, part in zip(schema.disc_names, schema.partitions):
        for msg in part.check():
            problems.append(f"coordinate {name!r}: {msg}")
    return problems


# ---------------------------------------------------------------------------
# Schema files
# ---------------------------------------------------------------------------

_KINDS = ("continuous", "binary", "categorical", "count")


def _map_from_entry(entry: dict) -> MonotoneMap:
    kind = entry.get("map", IDENTITY)
    if kind == AFFINE:
        return MonotoneMap(
            AFFINE,
            scale=float(entry.get("scale", 1.0)),
            shift=float(entry.get("shift", 0.0)),
        )
    if kind in (IDENTITY, LOG):
        return MonotoneMap(kind)
    raise SchemaError(f"unknown map {kind!r}")


def _partition_from_entry(entry: dict) -> PartitionSpec:
    kind = entry["kind"]
    if kind == "count":
        return PartitionSpec.counting(
            start=float(entry.get("start", 0.0)), step=float(entry.get("step", 1.0))
        )
    if "cuts" in entry:
        return PartitionSpec.from_cuts(entry["cuts"])
    if kind == "binary":
        return PartitionSpec.from_cuts([0.0])
    # categorical default: unit-spaced cuts starting at zero
    q = int(entry["levels"])
    if q < 2:
        raise SchemaError(f"categorical column needs at least 2 levels, got {q}")
    return PartitionSpec.from_cuts([float(k) for k in range(q - 1)])


def schema_from_dict(doc: dict) -> MixedSchema:
    """Build a schema from its file representation (see docs/formats.md)."""
    try:
        columns = doc["columns"]
    except (TypeError, KeyError):
        raise SchemaError("schema document must have a 'columns' list") from None
    if not isinstance(columns, list) or not columns:
        raise SchemaError("'columns' must be a non-empty list")
    cont_maps, partitions = [], []
    cont_names, disc_names, order = [], [], []
    for i, entry in enumerate(columns):
        if not isinstance(entry, dict):
            raise SchemaError(f"column {i}: entry must be a mapping")
        name = entry.get("name", f"col{i + 1}")
        kind = entry.get("kind")
        if kind not in _KINDS:
            raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
        order.append(name)
        if kind == "continuous":
            cont_names.append(name)
            cont_maps.append(_map_from_entry(entry))
        else:
            if kind == "categorical" and "levels" not in entry and "cuts" not in entry:
                raise SchemaError(f"column {name!r}: categorical needs 'levels' or 'cuts'")
            if kind == "binary" and "cuts" in entry and len(entry["cuts"]) != 1:
                raise SchemaError(f"column {name!r}: binary takes exactly one cut")
            disc_names.append(name)
            partitions.append(_partition_from_entry(entry))
            q = partitions[-1].n_levels
            if kind == "categorical" and "levels" in entry and q != int(entry["levels"]):
                raise SchemaError(
                    f"column {name!r}: cuts give {q} levels, entry says {entry['levels']}"
                )
    schema = MixedSchema(
        cont_maps=tuple(cont_maps),
        partitions=tuple(partitions),
        cont_names=tuple(cont_names),
        disc_names=tuple(disc_names),
        column_order=tuple(order),
    )
    problems = validate_schema(schema)
    if problems:
        raise SchemaError("; ".join(problems))
    return schema


def schema_to_dict(schema: MixedSchema) -> dict:
    """File representation of a schema (inverse of :func:`schema_from_dict`)."""
    cont = dict(zip(schema.cont_names, schema.cont_maps))
    disc = dict(zip(schema.disc_names, schema.partitions))
    columns = []
    for name in schema.column_order:
        if name in cont:
            m = cont[name]
            entry: dict = {"name": name, "kind": "continuous", "map": m.kind}
            if m.kind == AFFINE:
                entry["scale"] = m.scale
                entry["shift"] = m.shift
            columns.append(entry)
        else:
            part = disc[name]
            if part.unbounded:
                start, step = part.rule
                entry = {"name": name, "kind": "count", "start": start, "step": step}
            else:
                q = part.n_levels
                kind = "binary" if q == 2 else "categorical"
                entry = {"name": name, "kind": kind, "levels": q, "cuts": list(part.cuts)}
            columns.append(entry)
    return {"columns": columns}


def load_schema(path) -> MixedSchema:
    """Read a schema file (JSON, see docs/formats.md)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file {path}: {exc}") from None
    return schema_from_dict(doc)


def save_schema(schema: MixedSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2)
        fh.write("\n")
