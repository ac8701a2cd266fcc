"""Numerical verification of divergence non-expansion under rounding, and
desk-scale posterior contraction experiments.

Rounding a latent density through the monotone-map/threshold construction
cannot increase Kullback-Leibler or L1 divergence: the mixed-scale
divergence between two pushforwards is at most the latent divergence
between the densities being pushed.  :func:`check_kl_nonexpansion` and
:func:`check_l1_nonexpansion` verify the inequality numerically on a
given pair, and :func:`nonexpansion_suite` sweeps it over randomized
mixture pairs with mixed schemas.

The contraction side fits the posterior sampler to growing samples from a
known truth and tracks the L1 error of the predictive density.  No rate
constant is asserted — the predicted rate sequence is drawn only as a
visual reference — but the mean error should fall as the sample grows.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .density import MixedDensity, pushforward_sample
from .divergence import (
    METHOD_MONTE_CARLO,
    DivergenceConfig,
    DivergenceEstimate,
    kl_mixed,
    l1_mixed,
)
from .gaussian import GaussianComponent
from .mixture import LatentMixture
from .sampler import DPConfig, NIWParams, predictive_density, run
from .schema import MixedSchema, MonotoneMap, PartitionSpec

__all__ = [
    "NonexpansionReport",
    "ContractionReport",
    "check_kl_nonexpansion",
    "check_l1_nonexpansion",
    "nonexpansion_suite",
    "random_instance",
    "canonical_truth",
    "contraction_experiment",
]


# ---------------------------------------------------------------------------
# Non-expansion checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonexpansionReport:
    """One verified instance of the divergence non-expansion inequality.

    ``slack = latent - mixed`` should be nonnegative up to the combined
    numerical tolerance of the two estimates; ``holds`` derives from the
    stored numbers rather than being recorded separately.
    """

    kind: str
    latent: DivergenceEstimate
    mixed: DivergenceEstimate
    instance: str

    @property
    def slack(self) -> float:
        if math.isinf(self.latent.value):
            return math.inf
        return self.latent.value - self.mixed.value

    @property
    def tolerance(self) -> float:
        """Combined numerical allowance: deterministic error bounds enter
        directly, Monte Carlo standard errors at three sigma."""
        total = 2e-9
        for est in (self.latent, self.mixed):
            factor = 3.0 if est.method == METHOD_MONTE_CARLO else 1.0
            total += factor * est.std_error
        return total

    @property
    def holds(self) -> bool:
        return self.slack >= -self.tolerance

    def record(self) -> str:
        """One structured text line for report files."""
        return (
            f"check={self.kind} latent={self.latent.value:.10g}"
            f"(±{self.latent.std_error:.3g}) mixed={self.mixed.value:.10g}"
            f"(±{self.mixed.std_error:.3g}) slack={self.slack:.10g}"
            f" tol={self.tolerance:.3g} holds={str(self.holds).lower()}"
            f' instance="{self.instance}"'
        )


def _latent_schema(p: int) -> MixedSchema:
    """All-identity schema: the rounding map degenerates to the identity."""
    return MixedSchema(cont_maps=tuple(MonotoneMap() for _ in range(p)))


def _describe_schema(schema: MixedSchema) -> str:
    maps = ",".join(m.describe() for m in schema.cont_maps)
    parts = ",".join(
        "count" if part.unbounded else f"{part.n_levels}-level"
        for part in schema.partitions
    )
    return f"maps=[{maps}] cells=[{parts}]"


def _check_nonexpansion(
    kind: str,
    f0: LatentMixture,
    f: LatentMixture,
    schema: MixedSchema,
    cfg: DivergenceConfig,
) -> NonexpansionReport:
    p = schema.p
    if f0.dim != p or f.dim != p:
        raise ValueError(
            f"mixture dimension {f0.dim}/{f.dim} does not match schema {p}"
        )
    divergence = kl_mixed if kind == "kl" else l1_mixed
    flat = _latent_schema(p)
    # Box accuracy well below the check tolerances; the achieved error is
    # folded into each estimate's std_error, hence into the tolerance.
    box = {"box_accuracy": 2e-5, "box_max_points": 1 << 18}
    latent = divergence(
        MixedDensity(flat, f0, seed=cfg.seed, **box),
        MixedDensity(flat, f, seed=cfg.seed, **box),
        cfg,
    )
    mixed = divergence(
        MixedDensity(schema, f0, seed=cfg.seed, **box),
        MixedDensity(schema, f, seed=cfg.seed, **box),
        cfg,
    )
    instance = (
        f"p={p} K={len(f0.weights)}/{len(f.weights)} {_describe_schema(schema)}"
    )
    return NonexpansionReport(kind=kind, latent=latent, mixed=mixed, instance=instance)


def check_kl_nonexpansion(
    f0: LatentMixture,
    f: LatentMixture,
    schema: MixedSchema,
    cfg: DivergenceConfig | None = None,
) -> NonexpansionReport:
    """Verify KL(g f0 || g f) <= KL(f0 || f) for the rounding map g.

    Both divergences are estimated with the same configuration; the
    latent one treats the mixtures as densities on R^p directly.
    """
    return _check_nonexpansion("kl", f0, f, schema, cfg or DivergenceConfig())


def check_l1_nonexpansion(
    f0: LatentMixture,
    f: LatentMixture,
    schema: MixedSchema,
    cfg: DivergenceConfig | None = None,
) -> NonexpansionReport:
    """Verify L1(g f0, g f) <= L1(f0, f) for the rounding map g."""
    return _check_nonexpansion("l1", f0, f, schema, cfg or DivergenceConfig())


# ---------------------------------------------------------------------------
# Randomized instances
# ---------------------------------------------------------------------------


def _random_cov(rng: np.random.Generator, p: int) -> np.ndarray:
    w = rng.normal(size=(p, p + 2))
    s = w @ w.T / (p + 2)
    d = rng.uniform(0.6, 1.3, size=p)
    return d[:, None] * s * d[None, :]


def _random_mixture(rng: np.random.Generator, p: int) -> LatentMixture:
    k = int(rng.integers(1, 4))
    weights = rng.dirichlet(np.full(k, 2.0))
    comps = tuple(
        GaussianComponent(rng.uniform(-1.2, 1.2, size=p), _random_cov(rng, p))
        for _ in range(k)
    )
    return LatentMixture(weights, comps)


def _perturbed(rng: np.random.Generator, f0: LatentMixture) -> LatentMixture:
    comps = []
    for comp in f0.components:
        mean = comp.mean + rng.normal(0.0, 0.35, size=comp.dim)
        scale = math.exp(rng.normal(0.0, 0.15))
        comps.append(GaussianComponent(mean, scale * comp.cov))
    raw = f0.weights * rng.dirichlet(np.full(len(comps), 6.0))
    return LatentMixture(raw / raw.sum(), tuple(comps))


def _random_partition(rng: np.random.Generator, allow_count: bool) -> PartitionSpec:
    kinds = ["binary", "categorical"] + (["count"] if allow_count else [])
    kind = kinds[rng.integers(len(kinds))]
    if kind == "binary":
        return PartitionSpec.from_cuts((float(rng.uniform(-0.7, 0.7)),))
    if kind == "categorical":
        a = float(rng.uniform(-1.0, -0.1))
        b = float(rng.uniform(0.1, 1.0))
        return PartitionSpec.from_cuts((a, b))
    return PartitionSpec.counting()


def _random_map(rng: np.random.Generator) -> MonotoneMap:
    roll = rng.random()
    if roll < 0.4:
        return MonotoneMap()
    if roll < 0.8:
        scale = float(rng.uniform(0.5, 2.0)) * (1 if rng.random() < 0.5 else -1)
        return MonotoneMap("affine", scale=scale, shift=float(rng.uniform(-1, 1)))
    return MonotoneMap("log")


def random_instance(
    rng: np.random.Generator, max_dim: int = 3
) -> tuple[LatentMixture, LatentMixture, MixedSchema]:
    """One randomized (f0, f, schema) triple for the non-expansion suites.

    Dimensions are kept at desk scale (p <= max_dim); discrete blocks mix
    binary, 3-level, and count coordinates, with at most one count
    coordinate per instance to keep outcome enumerations small.  Half the
    pairs are local perturbations (small divergences), half independent
    draws (large ones).
    """
    p = int(rng.integers(1, max_dim + 1))
    p2 = int(rng.integers(1, p + 1))  # always at least one rounded coordinate
    p1 = p - p2
    cont_maps = tuple(_random_map(rng) for _ in range(p1))
    partitions = []
    allow_count = True
    for _ in range(p2):
        part = _random_partition(rng, allow_count)
        allow_count = allow_count and not part.unbounded
        partitions.append(part)
    schema = MixedSchema(cont_maps=cont_maps, partitions=tuple(partitions))
    f0 = _random_mixture(rng, p)
    f = _perturbed(rng, f0) if rng.random() < 0.5 else _random_mixture(rng, p)
    return f0, f, schema


def nonexpansion_suite(
    kind: str = "kl",
    n_instances: int = 100,
    seed: int = 0,
    cfg: DivergenceConfig | None = None,
    max_dim: int = 3,
) -> list[NonexpansionReport]:
    """Run the non-expansion check over randomized instances.

    Instance ``i`` is generated and estimated from substream ``(seed, i)``,
    so the suite is reproducible and each report is independent of the
    suite size.
    """
    if kind not in ("kl", "l1"):
        raise ValueError(f"unknown check kind {kind!r}")
    base = cfg or DivergenceConfig(
        tail_tol=1e-6, quad_abs_tol=1e-7, quad_rel_tol=1e-6, mc_samples=6000
    )
    reports = []
    for i in range(n_instances):
        ss = np.random.SeedSequence(seed, spawn_key=(i,))
        rng = np.random.default_rng(ss)
        f0, f, schema = random_instance(rng, max_dim=max_dim)
        inst_cfg = replace(base, seed=int(ss.generate_state(1)[0]))
        reports.append(_check_nonexpansion(kind, f0, f, schema, inst_cfg))
    return reports


# ---------------------------------------------------------------------------
# Contraction experiment
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ContractionReport:
    """L1 error of the posterior predictive across growing sample sizes.

    ``errors[i, r]`` is the error of replication ``r`` at ``n_grid[i]``
    (NaN where the fit failed); means and spreads ignore failures.  The
    reference curve is a scaled ``n^{-1/2} (log n)^t`` drawn for visual
    comparison only.
    """

    n_grid: tuple[int, ...]
    errors: np.ndarray
    means: np.ndarray
    spreads: np.ndarray
    slope: float
    reference: str
    reference_curve: np.ndarray
    failures: list[str]

    def __post_init__(self) -> None:
        self.n_grid = tuple(int(n) for n in self.n_grid)
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("sample-size grid must be strictly increasing")
        if self.errors.shape != (len(self.n_grid), self.errors.shape[1]):
            raise ValueError("errors must be (len(n_grid), replications)")
        if self.errors.shape[1] < 3:
            raise ValueError("need at least 3 replications per sample size")

    @property
    def replications(self) -> int:
        return self.errors.shape[1]

    def inversions(self) -> int:
        """How many steps of the grid fail to decrease the mean error."""
        return int(np.sum(np.diff(self.means) > 0))

    def records(self) -> list[str]:
        lines = []
        for i, n in enumerate(self.n_grid):
            for r in range(self.replications):
                err = self.errors[i, r]
                status = "ok" if np.isfinite(err) else "failed"
                lines.append(f"n={n} rep={r} l1={err:.6g} status={status}")
        for i, n in enumerate(self.n_grid):
            lines.append(
                f"n={n} mean={self.means[i]:.6g} spread={self.spreads[i]:.6g}"
                f" reference={self.reference_curve[i]:.6g}"
            )
        lines.append(f"slope={self.slope:.4g} reference=\"{self.reference}\"")
        return lines


def canonical_truth(with_count: bool = True) -> MixedDensity:
    """Fixed mixed-scale truth used by the contraction experiments.

    One continuous coordinate plus a binary one, and optionally a count
    coordinate; a two-component latent mixture with mild correlation so
    the discrete margins are informative about the continuous block.
    """
    if with_count:
        schema = MixedSchema(
            cont_maps=(MonotoneMap(),),
            partitions=(PartitionSpec.from_cuts((0.0,)), PartitionSpec.counting()),
            cont_names=("x",),
            disc_names=("flag", "events"),
        )
        cov_a = np.array(
            [[1.0, 0.35, 0.2], [0.35, 1.0, 0.15], [0.2, 0.15, 0.8]]
        )
        cov_b = np.array(
            [[0.7, -0.2, 0.1], [-0.2, 0.9, 0.0], [0.1, 0.0, 1.1]]
        )
        comps = (
            GaussianComponent(np.array([-0.8, -0.4, 1.5]), cov_a),
            GaussianComponent(np.array([1.0, 0.6, 3.0]), cov_b),
        )
    else:
        schema = MixedSchema(
            cont_maps=(MonotoneMap(),),
            partitions=(PartitionSpec.from_cuts((0.0,)),),
            cont_names=("x",),
            disc_names=("flag",),
        )
        comps = (
            GaussianComponent(
                np.array([-0.8, -0.4]), np.array([[1.0, 0.35], [0.35, 1.0]])
            ),
            GaussianComponent(
                np.array([1.0, 0.6]), np.array([[0.7, -0.2], [-0.2, 0.9]])
            ),
        )
    mixture = LatentMixture(np.array([0.55, 0.45]), comps)
    return MixedDensity(schema, mixture, seed=0)


def _contraction_job(
    truth: MixedDensity,
    n: int,
    job_index: int,
    rep_seed: np.random.SeedSequence,
    niw: NIWParams | None,
    cfg: DPConfig,
    div_cfg: DivergenceConfig,
    max_predictive_draws: int,
) -> float:
    data_rng = np.random.default_rng(rep_seed)
    data = pushforward_sample(truth, n, data_rng)
    job_cfg = replace(cfg, chain=job_index)
    draws = run(data, truth.schema, niw, job_cfg)
    if draws.n_draws > max_predictive_draws:
        stride = -(-draws.n_draws // max_predictive_draws)
        draws.draws = draws.draws[::stride]
    predictive = predictive_density(
        draws, seed=div_cfg.seed, weight_floor=1e-7
    )
    return l1_mixed(predictive, truth, div_cfg).value


def contraction_experiment(
    truth: MixedDensity,
    n_grid: tuple[int, ...],
    replications: int,
    niw: NIWParams | None,
    cfg: DPConfig,
    *,
    div_cfg: DivergenceConfig | None = None,
    threads: int = 1,
    rate_exponent: float = 1.0,
    max_predictive_draws: int = 50,
) -> ContractionReport:
    """Fit growing samples from ``truth`` and track predictive L1 error.

    Jobs (one per (n, replication) pair) are independent: data come from
    the substream ``(cfg.seed; 9, i, r)`` and each fit runs on its own
    chain index, so the report is identical for any ``threads`` value.
    Failed fits are recorded and skipped in the summaries, not fatal.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("sample-size grid must be strictly increasing")
    if replications < 3:
        raise ValueError("need at least 3 replications")
    dcfg = div_cfg or DivergenceConfig(
        tail_tol=1e-5, quad_abs_tol=1e-5, quad_rel_tol=1e-5, seed=cfg.seed
    )
    jobs = []
    for i, n in enumerate(n_grid):
        for r in range(replications):
            seq = np.random.SeedSequence(cfg.seed, spawn_key=(9, i, r))
            jobs.append((i, r, n, len(jobs), seq))

    errors = np.full((len(n_grid), replications), np.nan)
    failures: list[str] = []

    def _run_one(job):
        i, r, n, idx, seq = job
        try:
            return i, r, _contraction_job(
                truth, n, idx, seq, niw, cfg, dcfg, max_predictive_draws
            ), None
        except Exception as exc:  # recorded, not fatal
            return i, r, np.nan, f"n={n} rep={r}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    for i, r, err, failure in sorted(results, key=lambda t: (t[0], t[1])):
        errors[i, r] = err
        if failure is not None:
            failures.append(failure)

    means = np.nanmean(errors, axis=1)
    spreads = np.nanstd(errors, axis=1)
    logn = np.log(np.asarray(n_grid, dtype=float))
    good = np.isfinite(means) & (means > 0)
    if good.sum() >= 2:
        slope = float(np.polyfit(logn[good], np.log(means[good]), 1)[0])
    else:
        slope = math.nan
    ref = np.asarray(n_grid, dtype=float) ** -0.5 * np.log(
        np.asarray(n_grid, dtype=float)
    ) ** rate_exponent
    anchor = means[good][0] / ref[good][0] if good.any() else 1.0
    return ContractionReport(
        n_grid=n_grid,
        errors=errors,
        means=means,
        spreads=spreads,
        slope=slope,
        reference=f"n^-1/2 * (log n)^{rate_exponent:g} (visual reference)",
        reference_curve=anchor * ref,
        failures=failures,
    )
