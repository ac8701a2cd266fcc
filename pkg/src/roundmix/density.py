"""Mixed-scale densities induced by rounding a latent Gaussian mixture.

An observation ``y = (y1, y2)`` arises from a latent vector through
coordinatewise monotone maps on the continuous block and interval
thresholding on the discrete block.  For a Gaussian-mixture latent law
the induced density factors exactly component by component:

    f(y) = sum_k w_k * N_k(u1) * P_k(cell(y2) | u1) * |J(y1)|

where ``u1`` is the latent preimage of ``y1``, ``N_k`` is component k's
continuous-block marginal, ``P_k`` the conditional Gaussian probability
of the discrete cell, and ``|J|`` the inverse-map Jacobian.  All the
heavy lifting here is precomputing those conditional pieces once per
component and evaluating them on batches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp, ndtri

from .gaussian import (
    DEFAULT_BOX_ACCURACY,
    DEFAULT_BOX_BUDGET,
    GaussianComponent,
    _box_prob_batch,
    _log_box_lower_batch,
    _log_interval_prob_std,
    box_probability,
    log_density as gaussian_logpdf,
    repair_spd,
)
from .mixture import LatentMixture, sample_latent
from .quadrature import adaptive_quad_vec, nested_quad_vec
from .schema import (
    Cell,
    MixedPoint,
    MixedSchema,
    SchemaError,
    cell_of,
    forward_continuous,
    latent_of_continuous,
)

__all__ = [
    "MixedDensity",
    "eval_mixed_logdensity",
    "pushforward_sample",
    "pushforward_arrays",
    "discrete_support_enumeration",
    "discrete_marginal",
    "latent_block_logdensity",
    "total_mass",
    "export_density_grid",
]

# Half-width, in component standard deviations, of the latent box used for
# continuous-block quadrature; the mass beyond it is far below every
# tolerance in this package.
_QUAD_SIGMA = 8.0


@dataclass(eq=False)
class _SplitComponent:
    """Per-component pieces of the continuous/discrete factorization."""

    weight: float
    cont: GaussianComponent | None
    marg2: GaussianComponent | None
    gain: np.ndarray | None
    cond_cov: np.ndarray
    cond_sd: float | None


def _split_component(
    weight: float, comp: GaussianComponent, p1: int, p2: int
) -> _SplitComponent:
    mean, cov = comp.mean, comp.cov
    if p2 == 0:
        return _SplitComponent(weight, comp, None, None, np.zeros((0, 0)), None)
    if p1 == 0:
        cond_cov = cov
        sd = math.sqrt(cond_cov[0, 0]) if p2 == 1 else None
        return _SplitComponent(weight, None, comp, None, cond_cov, sd)
    cont = GaussianComponent(mean[:p1], cov[:p1, :p1])
    marg2 = GaussianComponent(mean[p1:], cov[p1:, p1:])
    cross = cov[p1:, :p1]
    gain = cho_solve((cont.chol, True), cross.T).T
    cond_cov = cov[p1:, p1:] - gain @ cross.T
    cond_cov = repair_spd(0.5 * (cond_cov + cond_cov.T))
    sd = math.sqrt(cond_cov[0, 0]) if p2 == 1 else None
    return _SplitComponent(weight, cont, marg2, gain, cond_cov, sd)


@dataclass(eq=False)
class MixedDensity:
    """A latent Gaussian mixture pushed through a rounding schema.

    Parameters
    ----------
    schema : MixedSchema
        Coordinate layout: which axes are mapped monotonically and which
        are thresholded into cells.
    latent : LatentMixture
        Mixture on the latent space, continuous block first.  Its
        dimension must equal ``schema.p``.
    box_accuracy : float
        Target standard error for discrete-cell box probabilities.
    seed : int
        Master seed for the box-probability lattices.  Evaluations at the
        same discrete outcome derive the same substream, so results are
        reproducible and independent of evaluation order.
    box_max_points : int
        Budget per box probability before an accuracy failure is raised.

    The object is immutable in spirit: treat all fields as read-only.
    """

    schema: MixedSchema
    latent: LatentMixture
    box_accuracy: float = DEFAULT_BOX_ACCURACY
    seed: int = 0
    box_max_points: int = DEFAULT_BOX_BUDGET

    def __post_init__(self) -> None:
        if self.latent.dim != self.schema.p:
            raise SchemaError(
                f"latent dimension {self.latent.dim} != schema dimension "
                f"{self.schema.p}"
            )
        p1, p2 = self.schema.p1, self.schema.p2
        self._parts = [
            _split_component(w, comp, p1, p2)
            for w, comp in zip(self.latent.weights, self.latent.components)
        ]

    def box_rng(self, y2) -> np.random.Generator:
        """Deterministic RNG substream for one discrete outcome."""
        key = tuple(int(v) for v in np.atleast_1d(y2))
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=key)
        return np.random.default_rng(ss)


def eval_mixed_logdensity(fd: MixedDensity, y: MixedPoint) -> float:
    """Log density of one mixed observation.

    Sums, over mixture components, the continuous-block marginal density
    at the latent preimage times the conditional probability of the
    discrete cell, then adds the inverse-map log-Jacobian.  Pure-discrete
    densities drop the continuous factor and the Jacobian; pure-continuous
    ones drop the cell factor.

    Raises
    ------
    SchemaError
        If the point does not fit the schema.
    BoxAccuracyError
        If a cell probability cannot be pinned down within the budget.
    """
    y.check_against(fd.schema)
    p1, p2 = fd.schema.p1, fd.schema.p2
    if p1:
        u1, log_jac = latent_of_continuous(fd.schema, y.y1)
    else:
        u1, log_jac = np.zeros(0), 0.0
    cell = cell_of(fd.schema, y.y2) if p2 else None
    rng = fd.box_rng(y.y2) if p2 else None

    logs = np.empty(fd.latent.n_components)
    for k, part in enumerate(fd._parts):
        term = math.log(part.weight) if part.weight > 0 else -math.inf
        if part.cont is not None:
            term += float(gaussian_logpdf(part.cont, u1))
        if cell is not None:
            if part.gain is not None:
                mu = part.marg2.mean + part.gain @ (u1 - part.cont.mean)
            else:
                mu = part.marg2.mean
            if p2 == 1:
                term += float(
                    _log_interval_prob_std(
                        (cell.lower[0] - mu[0]) / part.cond_sd,
                        (cell.upper[0] - mu[0]) / part.cond_sd,
                    )
                )
            else:
                cond = GaussianComponent(mu, part.cond_cov)
                prob, _ = box_probability(
                    cond,
                    cell,
                    fd.box_accuracy,
                    rng=rng,
                    max_points=fd.box_max_points,
                )
                if prob > 0.0:
                    term += math.log(prob)
                else:
                    # The engine floored on a far cell: fall back to the
                    # log-space bound so the log density stays finite.
                    term += float(
                        _log_box_lower_batch(
                            mu[None, :], part.cond_cov, cell.lower, cell.upper
                        )[0]
                    )
        logs[k] = term
    return float(logsumexp(logs)) + log_jac


def latent_block_logdensity(
    fd: MixedDensity, u1: np.ndarray, y2, *, n_lattice: int = 256, n_shifts: int = 10
) -> tuple[np.ndarray, np.ndarray]:
    """Latent-measure density ``q(u1, cell(y2))`` on a batch, in log form.

    This is the integrand shared by normalization checks and the
    deterministic divergence paths: the mixed density with the continuous
    block kept on the *latent* scale (no Jacobian), evaluated for one fixed
    discrete outcome across a batch of latent points ``u1`` of shape
    ``(m, p1)``.

    Returns
    -------
    logq : ndarray, shape (m,)
        Finite wherever the density is representably positive: cells the
        probability-scale engines floor to zero fall back to a log-space
        lower bound, so ``-inf`` signals a genuine numerical zero.
    abs_err : ndarray, shape (m,)
        Bound on the absolute error of ``exp(logq)`` from the randomized
        lattice used for cells of dimension >= 2 (zero otherwise).
    """
    u1 = np.atleast_2d(np.asarray(u1, dtype=float))
    m = u1.shape[0]
    p1, p2 = fd.schema.p1, fd.schema.p2
    if u1.shape[1] != p1:
        raise SchemaError(f"latent block has {u1.shape[1]} coords, wants {p1}")
    cell = cell_of(fd.schema, y2) if p2 else None

    terms = np.empty((fd.latent.n_components, m))
    abs_err = np.zeros(m)
    for k, part in enumerate(fd._parts):
        logw = math.log(part.weight) if part.weight > 0 else -math.inf
        log_cont = (
            gaussian_logpdf(part.cont, u1) if part.cont is not None else 0.0
        )
        if cell is None:
            terms[k] = logw + log_cont
            continue
        if part.gain is not None:
            mu = part.marg2.mean + (u1 - part.cont.mean) @ part.gain.T
        else:
            mu = np.broadcast_to(part.marg2.mean, (m, p2))
        if p2 == 1:
            terms[k] = logw + log_cont + _log_interval_prob_std(
                (cell.lower[0] - mu[:, 0]) / part.cond_sd,
                (cell.upper[0] - mu[:, 0]) / part.cond_sd,
            )
            continue
        probs, ses = _box_prob_batch(
            mu,
            part.cond_cov,
            cell.lower,
            cell.upper,
            fd.box_rng(y2),
            n_lattice=n_lattice,
            n_shifts=n_shifts,
        )
        with np.errstate(divide="ignore"):
            terms[k] = logw + log_cont + np.log(probs)
        floored = probs == 0.0
        if np.any(floored):
            # Far cells below the engines' resolution: substitute the
            # log-space bound so downstream log ratios stay finite.  The
            # probability-scale slip is under the engines' own floor and
            # already inside the tracked error.
            lc = log_cont[floored] if isinstance(log_cont, np.ndarray) else log_cont
            terms[k, floored] = logw + lc + _log_box_lower_batch(
                mu[floored], part.cond_cov, cell.lower, cell.upper
            )
        abs_err += part.weight * np.exp(log_cont) * ses
    return logsumexp(terms, axis=0), abs_err


def pushforward_arrays(
    fd: MixedDensity, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` observations as arrays ``(y1 (n, p1), y2 (n, p2) int)``.

    Draws latent vectors from the mixture, maps the continuous block
    forward, and assigns each discrete coordinate the index of the cell
    containing its latent value.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    p1, p2 = fd.schema.p1, fd.schema.p2
    latent = sample_latent(fd.latent, n, rng)
    y1 = (
        forward_continuous(fd.schema, latent[:, :p1])
        if p1
        else np.zeros((n, 0))
    )
    y2 = np.zeros((n, p2), dtype=np.int64)
    for j, part in enumerate(fd.schema.partitions):
        y2[:, j] = part.level_of(latent[:, p1 + j])
    return y1, y2


def pushforward_sample(
    fd: MixedDensity, n: int, rng: np.random.Generator
) -> list[MixedPoint]:
    """Sample ``n`` observations from the mixed density as points."""
    y1, y2 = pushforward_arrays(fd, n, rng)
    return [MixedPoint(y1[i], y2[i]) for i in range(n)]


def discrete_support_enumeration(
    fd: MixedDensity, tail_mass_tol: float
) -> list[np.ndarray]:
    """Finite list of discrete outcomes carrying all but ``tail_mass_tol`` mass.

    Finite coordinates contribute all their levels.  Unbounded count
    coordinates are truncated at the smallest level beyond the point
    ``mean + z * sd`` of every latent component, with
    ``z = max(6, upper-tail quantile of tail_mass_tol / p2)``, so the
    omitted mass is below ``tail_mass_tol`` by a union bound over
    coordinates and components.
    """
    if not 0.0 < tail_mass_tol <= 0.01:
        raise ValueError("tail_mass_tol must lie in (0, 0.01]")
    p2 = fd.schema.p2
    if p2 == 0:
        return [np.zeros(0, dtype=np.int64)]
    z = max(6.0, float(-ndtri(tail_mass_tol / p2)))
    axes = []
    for j, part in enumerate(fd.schema.partitions):
        q = part.n_levels
        if q is not None:
            axes.append(np.arange(q, dtype=np.int64))
            continue
        bound = 0
        for part_k in fd._parts:
            mu = part_k.marg2.mean[j]
            sd = math.sqrt(part_k.marg2.cov[j, j])
            bound = max(bound, int(part.level_of(mu + z * sd)))
        axes.append(np.arange(bound + 1, dtype=np.int64))
    grids = np.meshgrid(*axes, indexing="ij")
    stacked = np.stack([g.ravel() for g in grids], axis=1)
    return [stacked[i] for i in range(stacked.shape[0])]


def discrete_marginal(fd: MixedDensity, y2) -> tuple[float, float]:
    """Unconditional probability of one discrete outcome, with std error.

    Integrates the continuous block out exactly (the discrete-block
    marginal of each Gaussian component is Gaussian), leaving a plain
    cell probability per component.
    """
    if fd.schema.p2 == 0:
        raise SchemaError("schema has no discrete block")
    cell = cell_of(fd.schema, y2)
    rng = fd.box_rng(y2)
    prob = 0.0
    se = 0.0
    for part in fd._parts:
        p_k, se_k = box_probability(
            part.marg2, cell, fd.box_accuracy, rng=rng, max_points=fd.box_max_points
        )
        prob += part.weight * p_k
        se += part.weight * se_k
    return prob, se


def _log_marginal_lower(fd: MixedDensity, y2) -> float:
    """Log-space lower bound on one discrete outcome's probability.

    Backstop for :func:`discrete_marginal` when the probability-scale box
    engines floor to exact zero on a far cell; exact (not just a bound)
    when a single coordinate remains.  ``-inf`` means even the bound
    degenerated, i.e. the mass is zero to every representable scale.
    """
    cell = cell_of(fd.schema, y2)
    vals = [
        math.log(part.weight)
        + float(
            _log_box_lower_batch(
                part.marg2.mean[None, :], part.marg2.cov, cell.lower, cell.upper
            )[0]
        )
        for part in fd._parts
        if part.weight > 0
    ]
    return float(logsumexp(vals)) if vals else -math.inf


def quadrature_box(fd: MixedDensity) -> tuple[np.ndarray, np.ndarray]:
    """Latent-space bounds covering all components to ``_QUAD_SIGMA`` sds."""
    p1 = fd.schema.p1
    lo = np.full(p1, np.inf)
    hi = np.full(p1, -np.inf)
    for part in fd._parts:
        mu = part.cont.mean
        sd = np.sqrt(np.diag(part.cont.cov))
        lo = np.minimum(lo, mu - _QUAD_SIGMA * sd)
        hi = np.maximum(hi, mu + _QUAD_SIGMA * sd)
    return lo, hi


def total_mass(
    fd: MixedDensity,
    *,
    tail_mass_tol: float = 1e-4,
    quad_abs_tol: float = 1e-7,
) -> tuple[float, float]:
    """Total probability mass, as a numerical check that it equals one.

    Sums cell probabilities over the enumerated discrete support and, for
    one or two continuous dimensions, integrates the latent-block density
    by adaptive quadrature (the Jacobian cancels against the change of
    variables, so latent-space integration is exact in law).  Returns
    ``(mass, error_bound)`` where the bound folds in quadrature error,
    lattice error, and the enumeration's tail allowance.
    """
    p1 = fd.schema.p1
    if p1 > 2:
        raise NotImplementedError("mass check supports at most 2 continuous dims")
    outcomes = discrete_support_enumeration(fd, tail_mass_tol)
    err_total = tail_mass_tol if fd.schema.p2 else 0.0
    mass = 0.0

    if p1 == 0:
        for y2 in outcomes:
            prob, se = discrete_marginal(fd, y2)
            mass += prob
            err_total += se
        return mass, err_total

    lo, hi = quadrature_box(fd)
    lattice_err = 0.0

    for y2 in outcomes:
        if p1 == 1:

            def integrand(xs):
                nonlocal lattice_err
                logq, aerr = latent_block_logdensity(fd, xs[:, None], y2)
                lattice_err = max(lattice_err, float(aerr.max(initial=0.0)))
                return np.exp(logq)

            val, qerr = adaptive_quad_vec(
                integrand, lo[0], hi[0], abs_tol=quad_abs_tol, rel_tol=1e-9
            )
        else:

            def integrand2(xs, ys):
                nonlocal lattice_err
                pts = np.stack([xs, ys], axis=1)
                logq, aerr = latent_block_logdensity(
                    fd, pts, y2, n_lattice=128, n_shifts=8
                )
                lattice_err = max(lattice_err, float(aerr.max(initial=0.0)))
                return np.exp(logq)

            val, qerr = nested_quad_vec(
                integrand2,
                lo[0],
                hi[0],
                lo[1],
                hi[1],
                abs_tol=max(quad_abs_tol, 1e-6),
                rel_tol=1e-9,
                max_intervals=128,
            )
        mass += val
        err_total += qerr + lattice_err * float(np.prod(hi - lo))
    return mass, err_total


def export_density_grid(fd: MixedDensity, y1_grid, path, *, tail_mass_tol=1e-6) -> int:
    """Write density values on a grid to CSV; returns the row count.

    One row per (grid point, discrete outcome): continuous coordinates,
    discrete coordinates, ``log_density``, ``density``.  ``y1_grid`` is an
    ``(m, p1)`` array of observed-scale continuous points (ignored, and
    allowed empty, when the schema has no continuous block).  Evaluation is
    batched per discrete outcome, so each component's cell probability
    machinery runs once per grid instead of once per point.
    """
    schema = fd.schema
    y1_grid = np.asarray(y1_grid, dtype=float).reshape(-1, schema.p1)
    if schema.p1 and y1_grid.shape[0] == 0:
        raise ValueError("need at least one grid point")
    if not schema.p1:
        y1_grid = np.zeros((1, 0))
    m = y1_grid.shape[0]
    u_grid = np.empty((m, schema.p1))
    jac = np.empty(m)
    for i in range(m):
        u_grid[i], jac[i] = latent_of_continuous(schema, y1_grid[i])
    outcomes = discrete_support_enumeration(fd, tail_mass_tol)

    header = list(schema.cont_names) + list(schema.disc_names)
    header += ["log_density", "density"]
    n_rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for y2 in outcomes:
            logq, _ = latent_block_logdensity(fd, u_grid, y2)
            logf = logq + jac
            for i in range(m):
                row = [format(v, ".17g") for v in y1_grid[i]]
                row += [str(int(v)) for v in y2]
                row += [format(logf[i], ".17g"), format(math.exp(logf[i]), ".17g")]
                writer.writerow(row)
                n_rows += 1
    return n_rows
