"""Blocked Gibbs sampler for rounded data under a DP mixture of Gaussians.

The model treats each observation as a rounded latent vector: the
continuous block is pinned exactly by inverting the monotone maps, the
discrete block is augmented inside its cell.  The latent law is a
truncated stick-breaking Dirichlet-process mixture of Gaussians with a
Normal-Inverse-Wishart base measure, so every conditional in the sweep
is exact:

(a) per observation, redraw the discrete-block latents from the
    allocated cluster's Gaussian conditioned on the continuous block and
    truncated to the observation's cell;
(b) redraw allocations from their categorical posterior;
(c) redraw stick weights from Beta conditionals (last stick pinned at 1);
(d) redraw cluster parameters from conjugate NIW updates.

Reproducibility is structural rather than stateful: every random draw
comes from a generator keyed by ``(seed, chain, iteration, role, ...)``,
with the per-observation role keyed by a stable row key.  Permuting the
data rows (carrying their keys along) therefore permutes, bit for bit,
the same draws.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.stats import invwishart

from .density import MixedDensity
from .gaussian import (
    GaussianComponent,
    NumericalError,
    _cell_interior_point,
    _coordinate_gibbs,
    log_density,
    repair_spd,
    truncated_normal_draw,
)
from .mixture import LatentMixture
from .schema import Cell, MixedPoint, MixedSchema, SchemaError, cell_of, latent_of_continuous

__all__ = [
    "NIWParams",
    "DPConfig",
    "SamplerState",
    "PosteriorDraws",
    "default_niw",
    "niw_posterior",
    "sample_niw",
    "init_state",
    "gibbs_sweep",
    "run",
    "flatten_draws",
    "predictive_density",
    "data_digest",
]


@dataclass(frozen=True)
class NIWParams:
    """Normal-Inverse-Wishart base measure: mean ~ N(m0, cov/kappa0),
    cov ~ InvWishart(nu0, psi0)."""

    m0: np.ndarray
    kappa0: float
    nu0: float
    psi0: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=float).reshape(-1))
        object.__setattr__(self, "psi0", np.asarray(self.psi0, dtype=float))
        p = self.m0.size
        if self.psi0.shape != (p, p):
            raise ValueError(f"psi0 must be {p}x{p}")
        if not np.allclose(self.psi0, self.psi0.T, rtol=1e-10, atol=1e-12):
            raise ValueError("psi0 must be symmetric")
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")
        if self.nu0 <= p - 1:
            raise ValueError(f"nu0 must exceed p - 1 = {p - 1}")
        np.linalg.cholesky(self.psi0)  # SPD or raise

    @property
    def dim(self) -> int:
        return self.m0.size


@dataclass(frozen=True)
class DPConfig:
    """Truncated stick-breaking settings and run schedule.

    ``iterations`` counts total sweeps including burn-in; draws are kept
    from sweeps past ``burn_in`` at the ``thinning`` stride.  Zero
    iterations is allowed and yields an empty draw list.
    """

    alpha: float = 1.0
    k_max: int = 30
    sweeps: int = 4
    iterations: int = 500
    burn_in: int = 100
    thinning: int = 1
    seed: int = 0
    chain: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.sweeps < 1 or self.thinning < 1:
            raise ValueError("sweeps and thinning must be at least 1")
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be nonnegative")
        if self.iterations > 0 and self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.iterations == 0 and self.burn_in != 0:
            raise ValueError("burn_in must be 0 when iterations is 0")

    @property
    def n_draws(self) -> int:
        if self.iterations == 0:
            return 0
        span = self.iterations - self.burn_in
        return (span + self.thinning - 1) // self.thinning


@dataclass(eq=False)
class SamplerState:
    """Mutable chain state; one Gibbs sweep advances it in place.

    The continuous block of ``latent`` never changes after
    initialization; the discrete block always lies inside ``cells``.
    ``row_keys`` are the stable per-observation substream keys.
    """

    schema: MixedSchema
    latent: np.ndarray
    cells: list[Cell]
    alloc: np.ndarray
    sticks: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    iteration: int
    row_keys: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.latent.shape[0]

    def occupancy(self) -> int:
        if self.n_obs == 0:
            return 0
        return int(np.unique(self.alloc).size)

    def check_cells(self) -> list[str]:
        """Invariant audit: discrete latents inside their cells."""
        p1 = self.schema.p1
        problems = []
        for i, cell in enumerate(self.cells):
            if not cell.contains(self.latent[i, p1:]):
                problems.append(f"row {i}: latent discrete block left its cell")
        return problems


@dataclass(eq=False)
class PosteriorDraws:
    """Thinned post-burn-in mixture draws plus provenance."""

    draws: list[LatentMixture]
    schema: MixedSchema
    config: DPConfig
    niw: NIWParams
    data_digest: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.draws)


# ---------------------------------------------------------------------------
# Conjugate pieces
# ---------------------------------------------------------------------------


def default_niw(latent: np.ndarray) -> NIWParams:
    """Weakly informative, scale-adapted base measure from initial latents.

    Mean at the latent average; kappa0 = 0.01 so the prior mean barely
    pulls; nu0 = p + 2 (the smallest integer df with a finite prior
    covariance mean); psi0 diagonal at the marginal latent variances.
    """
    latent = np.atleast_2d(np.asarray(latent, dtype=float))
    n, p = latent.shape
    if n == 0:
        raise ValueError("cannot derive a base measure from zero observations")
    m0 = latent.mean(axis=0)
    var = latent.var(axis=0, ddof=1) if n > 1 else np.ones(p)
    var = np.maximum(var, 1e-6)
    return NIWParams(m0=m0, kappa0=0.01, nu0=float(p + 2), psi0=np.diag(var))


def niw_posterior(niw: NIWParams, x: np.ndarray) -> NIWParams:
    """Closed-form NIW update for the rows of ``x`` (possibly none)."""
    x = np.asarray(x, dtype=float).reshape(-1, niw.dim)
    m = x.shape[0]
    if m == 0:
        return niw
    xbar = x.mean(axis=0)
    centered = x - xbar
    scatter = centered.T @ centered
    kappa_n = niw.kappa0 + m
    dev = (xbar - niw.m0)[:, None]
    psi_n = niw.psi0 + scatter + (niw.kappa0 * m / kappa_n) * (dev @ dev.T)
    m_n = (niw.kappa0 * niw.m0 + m * xbar) / kappa_n
    return NIWParams(m0=m_n, kappa0=kappa_n, nu0=niw.nu0 + m, psi0=psi_n)


def sample_niw(
    niw: NIWParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One (mean, covariance) draw from the NIW distribution."""
    cov = invwishart.rvs(df=niw.nu0, scale=niw.psi0, random_state=rng)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = np.linalg.cholesky(cov / niw.kappa0)
    mean = niw.m0 + chol @ rng.standard_normal(niw.dim)
    return mean, cov


def _stick_weights(v: np.ndarray) -> np.ndarray:
    head = np.concatenate([[1.0], np.cumprod(1.0 - v[:-1])])
    return v * head


# ---------------------------------------------------------------------------
# Substreams
# ---------------------------------------------------------------------------


def _substream(cfg: DPConfig, *key: int) -> np.random.Generator:
    """Generator keyed by (seed; chain, iteration, role, ...)."""
    ss = np.random.SeedSequence(cfg.seed, spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


_ROLE_ROW = 0
_ROLE_STICKS = 1
_ROLE_CLUSTER = 2
_ROLE_INIT = 3


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _initial_latent(
    data: list[MixedPoint], schema: MixedSchema
) -> tuple[np.ndarray, list[Cell]]:
    """Exact continuous block, capped cell midpoints for the discrete block."""
    problems = []
    for i, point in enumerate(data):
        try:
            point.check_against(schema)
        except SchemaError as exc:
            problems.append(f"row {i}: {exc}")
    if problems:
        raise SchemaError("invalid data rows: " + "; ".join(problems))
    n = len(data)
    latent = np.empty((n, schema.p))
    cells = []
    for i, point in enumerate(data):
        if schema.p1:
            latent[i, : schema.p1], _ = latent_of_continuous(schema, point.y1)
        cell = cell_of(schema, point.y2)
        cells.append(cell)
        if schema.p2:
            latent[i, schema.p1 :] = _cell_interior_point(cell)
    return latent, cells


def _kmeans_alloc(
    latent: np.ndarray, k: int, rng: np.random.Generator, n_iter: int = 10
) -> np.ndarray:
    """Standardized k-means labels (k-means++ start, a few Lloyd passes)."""
    n = latent.shape[0]
    k = min(k, n)
    if k <= 1:
        return np.zeros(n, dtype=np.int64)
    sd = latent.std(axis=0)
    sd[sd == 0] = 1.0
    z = (latent - latent.mean(axis=0)) / sd
    centers = np.empty((k, z.shape[1]))
    centers[0] = z[rng.integers(n)]
    d2 = ((z - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            centers[j] = z[rng.choice(n, p=d2 / total)]
        else:
            centers[j] = z[rng.integers(n)]
        d2 = np.minimum(d2, ((z - centers[j]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(n_iter):
        dist = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = z[members].mean(axis=0)
    return labels.astype(np.int64)


def init_state(
    data: list[MixedPoint],
    schema: MixedSchema,
    niw: NIWParams,
    cfg: DPConfig,
    rng: np.random.Generator,
) -> SamplerState:
    """Build the starting chain state.

    Continuous latents are set exactly; discrete latents start at capped
    cell midpoints; allocations come from a k-means-style seeding on the
    latents; sticks are drawn from their prior; cluster parameters from
    the NIW conditional given the seeded members.  Deterministic for a
    fixed ``rng``.  An empty ``data`` list is allowed (prior-only chain).
    """
    latent, cells = _initial_latent(data, schema)
    n = len(data)
    k = cfg.k_max
    alloc = (
        _kmeans_alloc(latent, min(k, 8), rng) if n else np.zeros(0, dtype=np.int64)
    )
    v = rng.beta(1.0, cfg.alpha, size=k)
    v[-1] = 1.0
    weights = _stick_weights(v)
    means = np.empty((k, schema.p))
    covs = np.empty((k, schema.p, schema.p))
    keys = np.arange(n, dtype=np.int64)
    for j in range(k):
        members = latent[alloc == j] if n else latent
        means[j], covs[j] = sample_niw(niw_posterior(niw, members), rng)
    return SamplerState(
        schema=schema,
        latent=latent,
        cells=cells,
        alloc=alloc,
        sticks=v,
        weights=weights,
        means=means,
        covs=covs,
        iteration=0,
        row_keys=keys,
    )


# ---------------------------------------------------------------------------
# The sweep
# ---------------------------------------------------------------------------


def _cluster_conditionals(state: SamplerState, cfg: DPConfig):
    """Per-cluster pieces for conditioning the discrete block on the
    continuous one: gain matrix plus either the conditional sd (one
    discrete dim) or (precision, conditional sds) for coordinate Gibbs."""
    p1, p2 = state.schema.p1, state.schema.p2
    out = []
    for k in range(cfg.k_max):
        cov = state.covs[k]
        try:
            if p1:
                chol11 = cholesky(cov[:p1, :p1], lower=True)
                gain = cho_solve((chol11, True), cov[:p1, p1:]).T
                ccov = cov[p1:, p1:] - gain @ cov[:p1, p1:]
                ccov = repair_spd(0.5 * (ccov + ccov.T))
            else:
                gain = None
                ccov = cov
            if p2 == 1:
                out.append((gain, math.sqrt(ccov[0, 0]), None, None))
            else:
                cc_chol = np.linalg.cholesky(ccov)
                prec = cho_solve((cc_chol, True), np.eye(p2))
                cond_sd = 1.0 / np.sqrt(np.diag(prec))
                out.append((gain, None, prec, cond_sd))
        except (np.linalg.LinAlgError, NumericalError) as exc:
            occ = int((state.alloc == k).sum())
            raise NumericalError(
                f"cluster {k} (occupancy {occ}): conditional covariance "
                f"factorization failed: {exc}"
            ) from exc
    return out


def gibbs_sweep(
    state: SamplerState,
    data: list[MixedPoint],
    niw: NIWParams,
    cfg: DPConfig,
    rng: np.random.Generator | None = None,
) -> SamplerState:
    """Advance the chain by one full sweep (in place; returns the state).

    The ``rng`` argument is accepted for interface symmetry but unused:
    all randomness comes from substreams keyed by
    ``(seed, chain, iteration, role, row key / cluster)``, which makes the
    sweep reproducible independent of scheduling and of data order (row
    keys travel with their rows).
    """
    del rng
    schema = state.schema
    p1, p2 = schema.p1, schema.p2
    n = state.n_obs
    k_max = cfg.k_max
    it = state.iteration + 1

    row_rngs = [
        _substream(cfg, cfg.chain, it, _ROLE_ROW, key) for key in state.row_keys
    ]

    # (a) discrete-block augmentation, truncated to each observation's cell
    if p2:
        conds = _cluster_conditionals(state, cfg)
        for i in range(n):
            k = state.alloc[i]
            gain, sd1, prec, cond_sd = conds[k]
            mu2 = state.means[k, p1:]
            if p1:
                mu2 = mu2 + gain @ (state.latent[i, :p1] - state.means[k, :p1])
            cell = state.cells[i]
            if p2 == 1:
                state.latent[i, p1] = truncated_normal_draw(
                    row_rngs[i], float(mu2[0]), sd1, cell.lower[0], cell.upper[0]
                )
            else:
                x = state.latent[i, p1:].copy()
                state.latent[i, p1:] = _coordinate_gibbs(
                    x, mu2, prec, cond_sd, cell.lower, cell.upper,
                    cfg.sweeps, row_rngs[i],
                )

    # (b) allocations from the categorical posterior
    if n:
        logp = np.empty((k_max, n))
        with np.errstate(divide="ignore"):
            logw = np.log(state.weights)
        for k in range(k_max):
            comp = GaussianComponent(state.means[k], state.covs[k])
            logp[k] = logw[k] + log_density(comp, state.latent)
        logp -= logp.max(axis=0, keepdims=True)
        probs = np.exp(logp)
        probs /= probs.sum(axis=0, keepdims=True)
        cum = np.cumsum(probs, axis=0)
        u = np.array([r.random() for r in row_rngs])
        state.alloc = np.minimum(
            (cum < u[None, :]).sum(axis=0), k_max - 1
        ).astype(np.int64)

    # (c) stick weights from their Beta conditionals, last stick pinned
    counts = np.bincount(state.alloc, minlength=k_max).astype(float)
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    stick_rng = _substream(cfg, cfg.chain, it, _ROLE_STICKS)
    v = np.empty(k_max)
    if k_max > 1:
        v[:-1] = stick_rng.beta(1.0 + counts[:-1], cfg.alpha + tail[:-1])
    v[-1] = 1.0
    state.sticks = v
    state.weights = _stick_weights(v)

    # (d) cluster parameters from conjugate NIW updates; members gathered
    # in row-key order so float summation is permutation-invariant
    for k in range(k_max):
        idx = np.where(state.alloc == k)[0]
        if idx.size:
            idx = idx[np.argsort(state.row_keys[idx], kind="stable")]
        post = niw_posterior(niw, state.latent[idx])
        krng = _substream(cfg, cfg.chain, it, _ROLE_CLUSTER, k)
        state.means[k], state.covs[k] = sample_niw(post, krng)

    state.iteration = it
    return state


def _log_joint(state: SamplerState) -> float:
    """Complete-data log likelihood of allocations and latents."""
    if state.n_obs == 0:
        return 0.0
    total = 0.0
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights)
    for k in np.unique(state.alloc):
        rows = state.latent[state.alloc == k]
        comp = GaussianComponent(state.means[k], state.covs[k])
        total += rows.shape[0] * logw[k] + float(np.sum(log_density(comp, rows)))
    return total


def data_digest(data: list[MixedPoint]) -> str:
    """Stable SHA-256 over the observations (17-digit floats, raw levels)."""
    h = hashlib.sha256()
    for point in data:
        cont = " ".join(format(float(v), ".17g") for v in point.y1)
        disc = " ".join(str(int(v)) for v in point.y2)
        h.update(f"{cont}|{disc}\n".encode("ascii"))
    return h.hexdigest()


def run(
    data: list[MixedPoint],
    schema: MixedSchema,
    niw: NIWParams | None,
    cfg: DPConfig,
) -> PosteriorDraws:
    """Run one chain: burn-in plus thinned sampling, with diagnostics.

    ``niw=None`` derives the base measure from the initialized latents
    (see :func:`default_niw`).  Diagnostics record the complete-data log
    joint, occupied-cluster count, and a cell-invariant audit per sweep.
    An empty ``data`` list yields draws from the prior itself.
    """
    if niw is None:
        latent, _ = _initial_latent(data, schema)
        niw = default_niw(latent)
    if niw.dim != schema.p:
        raise ValueError(f"base measure dimension {niw.dim} != schema {schema.p}")
    init_rng = _substream(cfg, cfg.chain, 0, _ROLE_INIT)
    state = init_state(data, schema, niw, cfg, init_rng)
    draws: list[LatentMixture] = []
    log_joint: list[float] = []
    occupancy: list[int] = []
    for _ in range(cfg.iterations):
        gibbs_sweep(state, data, niw, cfg)
        problems = state.check_cells()
        if problems:
            raise NumericalError(
                f"cell invariant broken at iteration {state.iteration}: "
                + problems[0]
            )
        log_joint.append(_log_joint(state))
        occupancy.append(state.occupancy())
        past_burn = state.iteration - cfg.burn_in
        if past_burn > 0 and (past_burn - 1) % cfg.thinning == 0:
            components = tuple(
                GaussianComponent(state.means[k].copy(), state.covs[k].copy())
                for k in range(cfg.k_max)
            )
            draws.append(LatentMixture(state.weights.copy(), components))
    return PosteriorDraws(
        draws=draws,
        schema=schema,
        config=cfg,
        niw=niw,
        data_digest=data_digest(data),
        diagnostics={"log_joint": log_joint, "occupancy": occupancy},
    )


def flatten_draws(
    draws: list[LatentMixture], weight_floor: float = 1e-9
) -> LatentMixture:
    """Uniform mixture over draws, collapsed into one mixture.

    Components whose flattened weight falls below ``weight_floor`` are
    dropped and the rest renormalized — an L1 perturbation below twice
    the dropped mass, far inside every tolerance used here.
    """
    if not draws:
        raise ValueError("cannot flatten zero draws")
    n = len(draws)
    weights = np.concatenate([m.weights for m in draws]) / n
    components = [c for m in draws for c in m.components]
    keep = weights >= weight_floor
    if not np.any(keep):
        keep = weights == weights.max()
    kept = weights[keep]
    return LatentMixture(
        kept / kept.sum(), tuple(c for c, flag in zip(components, keep) if flag)
    )


def predictive_density(
    draws: PosteriorDraws,
    *,
    box_accuracy: float | None = None,
    seed: int = 0,
    weight_floor: float = 1e-9,
) -> MixedDensity:
    """Posterior-mean density: the uniform mixture over all draws."""
    if not draws.draws:
        raise ValueError("cannot form a predictive density from zero draws")
    mixture = flatten_draws(draws.draws, weight_floor)
    kwargs = {} if box_accuracy is None else {"box_accuracy": box_accuracy}
    return MixedDensity(draws.schema, mixture, seed=seed, **kwargs)
