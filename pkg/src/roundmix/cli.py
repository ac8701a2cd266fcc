"""Command-line front end: ``roundmix fit|density|sample|divergence|lab``.

Options resolve in the order flag > config file > environment > built-in
default; the ``ROUNDMIX_SEED`` environment variable overrides the default
seed only.  Every command that writes a report also renders a PNG figure
next to the delimited output.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np
import psutil

from .dataio import DataError, Dataset, ingest, write_points_csv, write_table
from .density import (
    MixedDensity,
    discrete_marginal,
    discrete_support_enumeration,
    export_density_grid,
    pushforward_sample,
)
from .divergence import DivergenceConfig, kl_mixed, l1_mixed
from .gaussian import BoxAccuracyError, NumericalError
from .lab import canonical_truth, contraction_experiment, nonexpansion_suite
from .mixture import LatentMixture, load_draws, save_draws
from .plots import (
    contraction_figure,
    density_figure,
    fit_figure,
    marginals_figure,
    nonexpansion_figure,
)
from .sampler import (
    DPConfig,
    NIWParams,
    _initial_latent,
    default_niw,
    flatten_draws,
    predictive_density,
    run,
)
from .schema import MixedSchema, SchemaError, load_schema

_RUNTIME_ERRORS = (
    DataError,
    SchemaError,
    NumericalError,
    BoxAccuracyError,
    ValueError,
    NotImplementedError,
    OSError,
)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"config file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise click.UsageError(f"config file {path}: must be a JSON object")
    return doc


def _pick(flag, config: dict, key: str, default):
    """Flag wins over config file wins over the built-in default."""
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _pick_seed(flag, config: dict) -> int:
    seed = _pick(flag, config, "seed", None)
    if seed is None:
        seed = os.environ.get("ROUNDMIX_SEED", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise click.UsageError(f"seed must be an integer, got {seed!r}") from None
    if not 0 <= seed < 2**64:
        raise click.UsageError("seed must fit in an unsigned 64-bit integer")
    return seed


def _pick_path(flag, config: dict, key: str) -> Path:
    value = _pick(flag, config, key, None)
    if value is None:
        raise click.UsageError(f"missing required --{key.replace('_', '-')}")
    return Path(value)


def _require_exists(path: Path, what: str) -> Path:
    if not path.exists():
        raise click.UsageError(f"{what} {path} does not exist")
    return path


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _mixture_moments(mixture: LatentMixture) -> tuple[np.ndarray, np.ndarray]:
    """Latent mean and marginal sds of a mixture."""
    w = mixture.weights
    means = np.stack([c.mean for c in mixture.components])
    mu = w @ means
    second = w @ np.stack([np.diag(c.cov) + c.mean**2 for c in mixture.components])
    return mu, np.sqrt(np.maximum(second - mu**2, 1e-12))


def _density_from_draws(schema: MixedSchema, draws_path, seed: int) -> MixedDensity:
    draws = load_draws(draws_path)
    if not draws:
        raise DataError(f"{draws_path}: no mixture draws")
    mixture = flatten_draws(draws) if len(draws) > 1 else draws[0]
    if mixture.dim != schema.p:
        raise DataError(
            f"{draws_path}: mixtures have dimension {mixture.dim}, schema wants {schema.p}"
        )
    return MixedDensity(schema, mixture, seed=seed)


@click.group()
def main() -> None:
    """Mixed-scale density estimation via rounded Gaussian mixtures."""


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@main.command()
@click.option("--schema", "schema_path", type=click.Path(), help="Schema JSON file.")
@click.option("--data", "data_path", type=click.Path(), help="Observations CSV.")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config; flags win.")
@click.option("--iterations", type=int, default=None, help="Total Gibbs sweeps [500].")
@click.option("--burn-in", type=int, default=None, help="Discarded sweeps [iterations // 3].")
@click.option("--thinning", type=int, default=None, help="Keep every k-th sweep [1].")
@click.option("--k-max", type=int, default=None, help="Stick-breaking truncation [30].")
@click.option("--alpha", type=float, default=None, help="DP concentration [1.0].")
@click.option("--sweeps", type=int, default=None, help="Coordinate passes per cell redraw [4].")
@click.option("--chain", type=int, default=None, help="Chain index [0].")
@click.option("--kappa0", type=float, default=None, help="Prior mean strength [0.01].")
@click.option("--nu0", type=float, default=None, help="Prior degrees of freedom [p + 2].")
@click.option("--seed", type=int, default=None, help="RNG seed [0 or $ROUNDMIX_SEED].")
def fit(schema_path, data_path, out_dir, config_path, iterations, burn_in,
        thinning, k_max, alpha, sweeps, chain, kappa0, nu0, seed):
    """Fit the posterior sampler to a data file and write draw artifacts."""
    config = _load_config(config_path)
    schema_file = _require_exists(_pick_path(schema_path, config, "schema"), "schema file")
    data_file = _require_exists(_pick_path(data_path, config, "data"), "data file")
    out = _pick_path(out_dir, config, "out")
    iterations = int(_pick(iterations, config, "iterations", 500))
    if burn_in is None and "burn_in" not in config:
        burn_in = iterations // 3
    else:
        burn_in = int(_pick(burn_in, config, "burn_in", 0))
    try:
        cfg = DPConfig(
            alpha=float(_pick(alpha, config, "alpha", 1.0)),
            k_max=int(_pick(k_max, config, "k_max", 30)),
            sweeps=int(_pick(sweeps, config, "sweeps", 4)),
            iterations=iterations,
            burn_in=burn_in,
            thinning=int(_pick(thinning, config, "thinning", 1)),
            seed=_pick_seed(seed, config),
            chain=int(_pick(chain, config, "chain", 0)),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    kappa0 = _pick(kappa0, config, "kappa0", None)
    nu0 = _pick(nu0, config, "nu0", None)

    try:
        schema = load_schema(schema_file)
        dataset = ingest(data_file, schema)
        for reason in dataset.rejected:
            click.echo(f"rejected {reason}", err=True)

        niw = None
        if kappa0 is not None or nu0 is not None:
            latent, _ = _initial_latent(dataset.points, schema)
            base = default_niw(latent)
            niw = NIWParams(
                m0=base.m0,
                kappa0=float(kappa0) if kappa0 is not None else base.kappa0,
                nu0=float(nu0) if nu0 is not None else base.nu0,
                psi0=base.psi0,
            )

        out.mkdir(parents=True, exist_ok=True)
        try:
            draws = run(dataset.points, schema, niw, cfg)
        except NumericalError as exc:
            with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
                json.dump({"error": str(exc), "created": _timestamp()}, fh, indent=2)
            raise

        save_draws(draws.draws, out / "draws.txt")
        metadata = {
            "created": _timestamp(),
            "data": str(data_file),
            "data_digest": draws.data_digest,
            "n_rows": dataset.n_rows,
            "n_rejected": len(dataset.rejected),
            "n_draws": draws.n_draws,
            "config": {
                "alpha": cfg.alpha, "k_max": cfg.k_max, "sweeps": cfg.sweeps,
                "iterations": cfg.iterations, "burn_in": cfg.burn_in,
                "thinning": cfg.thinning, "seed": cfg.seed, "chain": cfg.chain,
            },
            "niw": {
                "m0": list(draws.niw.m0),
                "kappa0": draws.niw.kappa0,
                "nu0": draws.niw.nu0,
                "psi0": [list(row) for row in draws.niw.psi0],
            },
            "diagnostics": draws.diagnostics,
        }
        with open(out / "metadata.json", "w", encoding="utf-8") as fh:
            json.dump(metadata, fh, indent=2)
            fh.write("\n")

        if draws.n_draws:
            _fit_reports(out, schema, dataset, draws, cfg)
        click.echo(
            f"fit: {dataset.n_rows} rows, {draws.n_draws} draws -> {out}/draws.txt"
        )
    except click.ClickException:
        raise
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


def _fit_reports(out: Path, schema, dataset: Dataset, draws, cfg) -> None:
    predictive = predictive_density(draws, seed=cfg.seed)
    rows = []
    for i, (w, comp) in enumerate(
        zip(predictive.latent.weights, predictive.latent.components)
    ):
        rows.append(
            [i, float(w)]
            + [float(v) for v in comp.mean]
            + [float(v) for v in np.diag(comp.cov)]
        )
    names = list(schema.cont_names) + list(schema.disc_names)
    header = (
        ["component", "weight"]
        + [f"mean_{n}" for n in names]
        + [f"var_{n}" for n in names]
    )
    write_table(out / "predictive_summary.csv", header, rows)

    if draws.diagnostics.get("log_joint"):
        fit_figure(draws.diagnostics, out / "fit_diagnostics.png")

    if schema.p2 == 0:
        return
    counts: dict[tuple, int] = {}
    for point in dataset.points:
        key = tuple(int(v) for v in point.y2)
        counts[key] = counts.get(key, 0) + 1
    outcomes = {tuple(int(v) for v in o) for o in discrete_support_enumeration(predictive, 1e-4)}
    outcomes |= set(counts)
    outcomes = sorted(outcomes)
    empirical, fitted, ses = [], [], []
    for key in outcomes:
        empirical.append(counts.get(key, 0) / dataset.n_rows)
        prob, se = discrete_marginal(predictive, np.array(key, dtype=np.int64))
        fitted.append(prob)
        ses.append(se)
    write_table(
        out / "marginals.csv",
        list(schema.disc_names) + ["empirical", "fitted", "fitted_se"],
        [list(k) + [e, f, s] for k, e, f, s in zip(outcomes, empirical, fitted, ses)],
    )
    marginals_figure(outcomes, empirical, fitted, schema.disc_names, out / "marginals.png")


# ---------------------------------------------------------------------------
# density / sample
# ---------------------------------------------------------------------------


@main.command()
@click.option("--schema", "schema_path", type=click.Path(), help="Schema JSON file.")
@click.option("--draws", "draws_path", type=click.Path(), help="Mixture draws file.")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config; flags win.")
@click.option("--grid", "grid_n", type=int, default=None, help="Grid points per continuous axis [101; 41 in 2-d].")
@click.option("--span", type=float, default=None, help="Grid half-width in latent sds [4.0].")
@click.option("--tail-tol", type=float, default=None, help="Discrete tail mass to drop [1e-6].")
@click.option("--seed", type=int, default=None, help="RNG seed [0 or $ROUNDMIX_SEED].")
def density(schema_path, draws_path, out_dir, config_path, grid_n, span, tail_tol, seed):
    """Evaluate a fitted density on a grid; write CSV plus a figure."""
    config = _load_config(config_path)
    schema_file = _require_exists(_pick_path(schema_path, config, "schema"), "schema file")
    draws_file = _require_exists(_pick_path(draws_path, config, "draws"), "draws file")
    out = _pick_path(out_dir, config, "out")
    span = float(_pick(span, config, "span", 4.0))
    tail_tol = float(_pick(tail_tol, config, "tail_tol", 1e-6))
    seed_v = _pick_seed(seed, config)

    try:
        schema = load_schema(schema_file)
        if schema.p1 > 2:
            raise click.UsageError(
                "density grids support at most 2 continuous coordinates"
            )
        fd = _density_from_draws(schema, draws_file, seed_v)
        grid_default = 101 if schema.p1 <= 1 else 41
        m = int(_pick(grid_n, config, "grid", grid_default))
        if m < 2 and schema.p1:
            raise click.UsageError("--grid must be at least 2")

        from .schema import forward_continuous

        if schema.p1 == 0:
            y1_grid = np.zeros((1, 0))
        else:
            mu, sd = _mixture_moments(fd.latent)
            axes = [
                np.linspace(mu[j] - span * sd[j], mu[j] + span * sd[j], m)
                for j in range(schema.p1)
            ]
            if schema.p1 == 1:
                latent_grid = axes[0][:, None]
            else:
                xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
                latent_grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
            y1_grid = forward_continuous(schema, latent_grid)

        out.mkdir(parents=True, exist_ok=True)
        n_rows = export_density_grid(
            fd, y1_grid, out / "density_grid.csv", tail_mass_tol=tail_tol
        )
        density_figure(
            out / "density_grid.csv",
            out / "density.png",
            schema.cont_names,
            schema.disc_names,
        )
        click.echo(f"density: {n_rows} rows -> {out}/density_grid.csv")
    except click.ClickException:
        raise
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


@main.command()
@click.option("--schema", "schema_path", type=click.Path(), help="Schema JSON file.")
@click.option("--draws", "draws_path", type=click.Path(), help="Mixture draws file.")
@click.option("--n", "n_samples", type=int, default=None, help="Rows to draw [1000].")
@click.option("--out", "out_path", type=click.Path(), help="Output CSV file.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config; flags win.")
@click.option("--seed", type=int, default=None, help="RNG seed [0 or $ROUNDMIX_SEED].")
def sample(schema_path, draws_path, n_samples, out_path, config_path, seed):
    """Draw observations from a fitted density into a CSV file."""
    config = _load_config(config_path)
    schema_file = _require_exists(_pick_path(schema_path, config, "schema"), "schema file")
    draws_file = _require_exists(_pick_path(draws_path, config, "draws"), "draws file")
    out = _pick_path(out_path, config, "out")
    n = int(_pick(n_samples, config, "n", 1000))
    if n < 0:
        raise click.UsageError("--n must be nonnegative")
    seed_v = _pick_seed(seed, config)
    try:
        schema = load_schema(schema_file)
        fd = _density_from_draws(schema, draws_file, seed_v)
        rng = np.random.default_rng(np.random.SeedSequence(seed_v, spawn_key=(23,)))
        points = pushforward_sample(fd, n, rng)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True, exist_ok=True)
        write_points_csv(out, schema, points)
        click.echo(f"sample: {n} rows -> {out}")
    except click.ClickException:
        raise
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


# ---------------------------------------------------------------------------
# divergence
# ---------------------------------------------------------------------------


def _divergence_config(config: dict, tail_tol, quad_rel_tol, quad_abs_tol,
                       mc_samples, seed) -> DivergenceConfig:
    try:
        return DivergenceConfig(
            tail_tol=float(_pick(tail_tol, config, "tail_tol", 1e-6)),
            quad_rel_tol=float(_pick(quad_rel_tol, config, "quad_rel_tol", 1e-8)),
            quad_abs_tol=float(_pick(quad_abs_tol, config, "quad_abs_tol", 1e-9)),
            mc_samples=int(_pick(mc_samples, config, "mc_samples", 20_000)),
            seed=_pick_seed(seed, config),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


@main.command()
@click.option("--schema", "schema_path", type=click.Path(), help="Schema JSON file.")
@click.option("--f0", "f0_path", type=click.Path(), help="First density's draws file.")
@click.option("--f1", "f1_path", type=click.Path(), help="Second density's draws file.")
@click.option("--kind", type=click.Choice(["kl", "l1", "both"]), default="both",
              show_default=True, help="Which divergence(s) to compute.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Optional directory for divergence.csv.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config; flags win.")
@click.option("--tail-tol", type=float, default=None, help="Discrete tail mass bound [1e-6].")
@click.option("--quad-rel-tol", type=float, default=None, help="Quadrature relative tolerance [1e-8].")
@click.option("--quad-abs-tol", type=float, default=None, help="Quadrature absolute tolerance [1e-9].")
@click.option("--mc-samples", type=int, default=None, help="Monte Carlo sample count [20000].")
@click.option("--seed", type=int, default=None, help="RNG seed [0 or $ROUNDMIX_SEED].")
def divergence(schema_path, f0_path, f1_path, kind, out_dir, config_path,
               tail_tol, quad_rel_tol, quad_abs_tol, mc_samples, seed):
    """Divergences between two fitted densities over one schema."""
    config = _load_config(config_path)
    schema_file = _require_exists(_pick_path(schema_path, config, "schema"), "schema file")
    f0_file = _require_exists(_pick_path(f0_path, config, "f0"), "draws file")
    f1_file = _require_exists(_pick_path(f1_path, config, "f1"), "draws file")
    cfg = _divergence_config(config, tail_tol, quad_rel_tol, quad_abs_tol, mc_samples, seed)
    kinds = ["kl", "l1"] if kind == "both" else [kind]
    try:
        schema = load_schema(schema_file)
        fd0 = _density_from_draws(schema, f0_file, cfg.seed)
        fd1 = _density_from_draws(schema, f1_file, cfg.seed)
        rows = []
        for k in kinds:
            est = (kl_mixed if k == "kl" else l1_mixed)(fd0, fd1, cfg)
            note = f"  ({est.note})" if est.note else ""
            click.echo(
                f"{k}: {est.value:.10g} ± {est.std_error:.3g} [{est.method}]{note}"
            )
            rows.append([k, est.value, est.std_error, est.method,
                         est.tail_mass_tol, est.note])
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_table(
                out / "divergence.csv",
                ["kind", "value", "std_error", "method", "tail_mass_tol", "note"],
                rows,
            )
    except click.ClickException:
        raise
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


# ---------------------------------------------------------------------------
# lab
# ---------------------------------------------------------------------------


@main.group()
def lab() -> None:
    """Theory checks: divergence non-expansion and contraction trends."""


def _lab_suite(kind, n_random, out_dir, config_path, tail_tol, quad_rel_tol,
               quad_abs_tol, mc_samples, seed):
    config = _load_config(config_path)
    n = int(_pick(n_random, config, "random", 100))
    if n < 1:
        raise click.UsageError("--random must be positive")
    out = _pick_path(out_dir, config, "out")
    cfg = DivergenceConfig(
        tail_tol=float(_pick(tail_tol, config, "tail_tol", 1e-6)),
        quad_rel_tol=float(_pick(quad_rel_tol, config, "quad_rel_tol", 1e-6)),
        quad_abs_tol=float(_pick(quad_abs_tol, config, "quad_abs_tol", 1e-7)),
        mc_samples=int(_pick(mc_samples, config, "mc_samples", 6000)),
    )
    seed_v = _pick_seed(seed, config)
    try:
        reports = nonexpansion_suite(kind, n, seed=seed_v, cfg=cfg)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"nonexpansion_{kind}"
        with open(out / f"{stem}.txt", "w", encoding="utf-8") as fh:
            for r in reports:
                fh.write(r.record())
                fh.write("\n")
        write_table(
            out / f"{stem}.csv",
            ["index", "latent", "latent_err", "mixed", "mixed_err",
             "slack", "tolerance", "holds", "instance"],
            [
                [i, r.latent.value, r.latent.std_error, r.mixed.value,
                 r.mixed.std_error, r.slack, r.tolerance,
                 str(r.holds).lower(), r.instance]
                for i, r in enumerate(reports)
            ],
        )
        nonexpansion_figure(reports, out / f"{stem}.png")
        n_hold = sum(r.holds for r in reports)
        click.echo(f"{kind} non-expansion: {n_hold}/{len(reports)} hold -> {out}/{stem}.csv")
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


_suite_options = [
    click.option("--random", "n_random", type=int, default=None,
                 help="Number of randomized instances [100]."),
    click.option("--out", "out_dir", type=click.Path(), help="Output directory."),
    click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config; flags win."),
    click.option("--tail-tol", type=float, default=None, help="Discrete tail mass bound [1e-6]."),
    click.option("--quad-rel-tol", type=float, default=None, help="Quadrature relative tolerance [1e-6]."),
    click.option("--quad-abs-tol", type=float, default=None, help="Quadrature absolute tolerance [1e-7]."),
    click.option("--mc-samples", type=int, default=None, help="Monte Carlo sample count [6000]."),
    click.option("--seed", type=int, default=None, help="RNG seed [0 or $ROUNDMIX_SEED]."),
]


def _with_suite_options(f):
    for opt in reversed(_suite_options):
        f = opt(f)
    return f


@lab.command("kl")
@_with_suite_options
def lab_kl(n_random, out_dir, config_path, tail_tol, quad_rel_tol,
           quad_abs_tol, mc_samples, seed):
    """KL non-expansion of rounding over randomized mixture pairs."""
    _lab_suite("kl", n_random, out_dir, config_path, tail_tol, quad_rel_tol,
               quad_abs_tol, mc_samples, seed)


@lab.command("l1")
@_with_suite_options
def lab_l1(n_random, out_dir, config_path, tail_tol, quad_rel_tol,
           quad_abs_tol, mc_samples, seed):
    """L1 non-expansion of rounding over randomized mixture pairs."""
    _lab_suite("l1", n_random, out_dir, config_path, tail_tol, quad_rel_tol,
               quad_abs_tol, mc_samples, seed)


@lab.command("contraction")
@click.option("--n-grid", default=None, help="Comma-separated sample sizes [100,400,1600].")
@click.option("--replications", type=int, default=None, help="Fits per sample size [5].")
@click.option("--threads", type=int, default=None, help="Parallel jobs [physical cores].")
@click.option("--iterations", type=int, default=None, help="Gibbs sweeps per fit [250].")
@click.option("--burn-in", type=int, default=None, help="Discarded sweeps [100].")
@click.option("--thinning", type=int, default=None, help="Keep every k-th sweep [6].")
@click.option("--k-max", type=int, default=None, help="Stick-breaking truncation [10].")
@click.option("--alpha", type=float, default=None, help="DP concentration [1.0].")
@click.option("--with-count/--binary-only", default=True, show_default=True,
              help="Include the count coordinate in the canonical truth.")
@click.option("--rate-exponent", type=float, default=None, help="t in the n^-1/2 (log n)^t reference [1.0].")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config; flags win.")
@click.option("--seed", type=int, default=None, help="RNG seed [0 or $ROUNDMIX_SEED].")
def lab_contraction(n_grid, replications, threads, iterations, burn_in, thinning,
                    k_max, alpha, with_count, rate_exponent, out_dir, config_path, seed):
    """Posterior contraction trend against growing samples from a fixed truth."""
    config = _load_config(config_path)
    grid_text = str(_pick(n_grid, config, "n_grid", "100,400,1600"))
    try:
        grid = tuple(int(tok) for tok in grid_text.replace(" ", "").split(",") if tok)
    except ValueError:
        raise click.UsageError(f"bad --n-grid {grid_text!r}") from None
    replications = int(_pick(replications, config, "replications", 5))
    threads = _pick(threads, config, "threads", None)
    if threads is None:
        threads = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    threads = max(1, int(threads))
    out = _pick_path(out_dir, config, "out")
    rate_exponent = float(_pick(rate_exponent, config, "rate_exponent", 1.0))
    try:
        cfg = DPConfig(
            alpha=float(_pick(alpha, config, "alpha", 1.0)),
            k_max=int(_pick(k_max, config, "k_max", 10)),
            iterations=int(_pick(iterations, config, "iterations", 250)),
            burn_in=int(_pick(burn_in, config, "burn_in", 100)),
            thinning=int(_pick(thinning, config, "thinning", 6)),
            seed=_pick_seed(seed, config),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    try:
        truth = canonical_truth(with_count=with_count)
        report = contraction_experiment(
            truth, grid, replications, None, cfg,
            threads=threads, rate_exponent=rate_exponent,
        )
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "contraction.txt", "w", encoding="utf-8") as fh:
            for line in report.records():
                fh.write(line)
                fh.write("\n")
        write_table(
            out / "contraction.csv",
            ["n", "replication", "l1"],
            [
                [n, r, float(report.errors[i, r])]
                for i, n in enumerate(report.n_grid)
                for r in range(report.replications)
            ],
        )
        write_table(
            out / "contraction_summary.csv",
            ["n", "mean_l1", "spread", "reference"],
            [
                [n, float(report.means[i]), float(report.spreads[i]),
                 float(report.reference_curve[i])]
                for i, n in enumerate(report.n_grid)
            ],
        )
        contraction_figure(report, out / "contraction.png")
        for failure in report.failures:
            click.echo(f"failed replication: {failure}", err=True)
        trend = "non-increasing" if report.inversions() == 0 else (
            f"{report.inversions()} inversion(s)"
        )
        click.echo(
            f"contraction: means {np.array2string(report.means, precision=4)} "
            f"slope {report.slope:.3f} ({trend}) -> {out}/contraction.csv"
        )
        if not math.isfinite(report.slope):
            raise click.ClickException("all replications failed")
    except click.ClickException:
        raise
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


if __name__ == "__main__":
    main()
