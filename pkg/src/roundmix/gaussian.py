"""Multivariate Gaussian primitives.

Everything downstream leans on this module: log densities, marginal and
conditional distributions, rectangle (box) probabilities, and exact draws
with or without box truncation.

Box probabilities over half-open cells use randomized quasi-Monte Carlo in
the sequential-conditioning form of Genz: variables are reordered greedily,
the integrand is sampled on a Richtmyer lattice under independent random
shifts, and the spread of the shift means yields a standard error.  One
dimension is handled exactly through the normal CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri

from roundmix.schema import Cell

__all__ = [
    "NumericalError",
    "BoxAccuracyError",
    "GaussianComponent",
    "log_density",
    "condition",
    "marginal",
    "box_probability",
    "sample",
    "sample_truncated",
    "truncated_normal_draw",
    "repair_spd",
]

_LOG_2PI = math.log(2.0 * math.pi)

#: Target standard error for box probabilities unless told otherwise.
DEFAULT_BOX_ACCURACY = 1e-6

#: Total lattice-point budget for one box probability.
DEFAULT_BOX_BUDGET = 100_000

#: Number of independent lattice shifts (gives the error estimate).
DEFAULT_SHIFTS = 10

_START_LATTICE = 256

#: Standardized distance beyond which truncated draws switch to tilted rejection.
_TAIL_SWITCH = 6.0


class NumericalError(RuntimeError):
    """Linear algebra or integration failed beyond repair."""


class BoxAccuracyError(NumericalError):
    """Requested box-probability accuracy unreachable within the point budget."""

    def __init__(self, requested: float, achieved: float, points: int):
        self.requested = requested
        self.achieved = achieved
        self.points = points
        super().__init__(
            f"box probability std_error {achieved:.3e} > requested {requested:.3e} "
            f"after {points} lattice points"
        )


def _as_cov(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NumericalError(f"covariance must be square, got shape {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise NumericalError("covariance is not symmetric within 1e-12")
    return cov


def repair_spd(cov: np.ndarray, tries: int = 3) -> np.ndarray:
    """Return a Cholesky-factorizable version of ``cov``.

    Adds ``1e-8 * trace / p`` to the diagonal on failure, retrying up to
    ``tries`` times with the same increment before giving up.
    """
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    bump = 1e-8 * float(np.trace(cov)) / cov.shape[0]
    attempt = cov
    for k in range(tries + 1):
        try:
            np.linalg.cholesky(attempt)
            return attempt
        except np.linalg.LinAlgError:
            if k == tries:
                break
            attempt = attempt + bump * np.eye(cov.shape[0])
    raise NumericalError(
        f"covariance not positive definite after {tries} jitter retries "
        f"(cond={np.linalg.cond(cov):.3e})"
    )


@dataclass(eq=False)
class GaussianComponent:
    """A single multivariate normal, with its Cholesky factor cached.

    The covariance must be symmetric to 1e-12 (relative) and positive
    definite; construction fails otherwise.  Instances are treated as
    immutable once built.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = _as_cov(self.cov)
        if self.mean.ndim != 1 or self.cov.shape[0] != self.mean.size:
            raise NumericalError(
                f"mean of size {self.mean.size} does not match covariance "
                f"{self.cov.shape}"
            )
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.cov)):
            raise NumericalError("mean and covariance must be finite")
        try:
            self.chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise NumericalError(
                "covariance is not positive definite "
                f"(cond={np.linalg.cond(self.cov):.3e})"
            ) from None

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def log_det_half(self) -> float:
        """Half log determinant of the covariance, from the Cholesky diagonal."""
        return float(np.sum(np.log(np.diag(self.chol))))


def log_density(comp: GaussianComponent, x) -> float | np.ndarray:
    """Gaussian log density at one point ``(p,)`` or a batch ``(m, p)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    dev = (np.atleast_2d(x) - comp.mean).T
    z = solve_triangular(comp.chol, dev, lower=True)
    quad = np.einsum("ij,ij->j", z, z)
    out = -0.5 * (comp.dim * _LOG_2PI + quad) - comp.log_det_half
    return float(out[0]) if single else out


def marginal(comp: GaussianComponent, idx) -> GaussianComponent:
    """Marginal distribution on a subset of coordinates."""
    idx = np.atleast_1d(np.asarray(idx, dtype=int))
    return GaussianComponent(comp.mean[idx], comp.cov[np.ix_(idx, idx)])


def condition(comp: GaussianComponent, observed_idx, observed_values) -> GaussianComponent:
    """Condition on exact values of a subset of coordinates.

    Returns the Gaussian law of the remaining coordinates.  A singular
    observed block raises :class:`NumericalError` reporting its condition
    number.
    """
    obs = np.atleast_1d(np.asarray(observed_idx, dtype=int))
    vals = np.atleast_1d(np.asarray(observed_values, dtype=float))
    if obs.size != vals.size:
        raise NumericalError("observed indices and values differ in length")
    if obs.size == 0:
        return GaussianComponent(comp.mean.copy(), comp.cov.copy())
    if np.unique(obs).size != obs.size or obs.min() < 0 or obs.max() >= comp.dim:
        raise NumericalError(f"bad observed index set {obs.tolist()}")
    rest = np.setdiff1d(np.arange(comp.dim), obs)
    if rest.size == 0:
        raise NumericalError("conditioning on every coordinate leaves nothing")
    soo = comp.cov[np.ix_(obs, obs)]
    sro = comp.cov[np.ix_(rest, obs)]
    try:
        lo = np.linalg.cholesky(soo)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "observed-block covariance is singular "
            f"(cond={np.linalg.cond(soo):.3e})"
        ) from None
    gain = cho_solve((lo, True), sro.T).T
    mean_r = comp.mean[rest] + gain @ (vals - comp.mean[obs])
    cov_r = comp.cov[np.ix_(rest, rest)] - gain @ sro.T
    cov_r = 0.5 * (cov_r + cov_r.T)
    return GaussianComponent(mean_r, cov_r)


def sample(comp: GaussianComponent, rng: np.random.Generator, size: int | None = None):
    """Exact draw(s): one vector, or ``(size, p)`` when ``size`` is given."""
    if size is None:
        return comp.mean + comp.chol @ rng.standard_normal(comp.dim)
    z = rng.standard_normal((size, comp.dim))
    return comp.mean + z @ comp.chol.T


# ---------------------------------------------------------------------------
# Box probabilities
# ---------------------------------------------------------------------------


def _interval_prob_std(a, b):
    """P(a <= Z < b) for standard normal, stable in either tail; vectorized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper_tail = a >= 0
    p = np.where(upper_tail, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    return np.maximum(p, 0.0)


def _log_interval_prob_std(a, b):
    """log P(a <= Z < b) for standard normal, exact arbitrarily far out.

    Same survival-side trick as :func:`_interval_prob_std`, but composed
    from ``log_ndtr`` so the result stays finite (about ``-a**2 / 2``) long
    after the probability itself has underflowed.  Returns ``-inf`` only
    for genuinely empty intervals or non-finite standardized bounds.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper_tail = a >= 0
    hi = np.where(upper_tail, log_ndtr(-a), log_ndtr(b))
    lo = np.where(upper_tail, log_ndtr(-b), log_ndtr(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hi + np.log1p(-np.exp(np.minimum(lo - hi, 0.0)))
    return np.where(lo == hi, -np.inf, out)


def _primes(count: int) -> list[int]:
    found: list[int] = []
    n = 2
    while len(found) < count:
        if all(n % p for p in found):
            found.append(n)
        n += 1
    return found


def _richtmyer(dim: int) -> np.ndarray:
    """Kronecker generators: square roots of the first ``dim`` primes."""
    return np.sqrt(np.array(_primes(dim), dtype=float))


_INV_GOLDEN = 0.6180339887498949


def _shifted_lattice(s: int, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """One randomly shifted, tent-periodized QMC point set of shape (s, n).

    Rank-1 lattices for one and two dimensions (regular grid, golden-ratio
    generating vector), Kronecker points from prime square roots beyond that.
    The tent map folds the shifted points so the integrand need not be
    periodic.
    """
    k = np.arange(1, n_points + 1, dtype=float)
    u = rng.random(s)
    if s == 1:
        x = np.mod(k[None, :] / n_points + u[:, None], 1.0)
    elif s == 2:
        z2 = max(1, int(round(n_points * _INV_GOLDEN)))
        while math.gcd(z2, n_points) != 1:
            z2 += 1
        z = np.array([1.0, float(z2)])
        x = np.mod(z[:, None] * k[None, :] / n_points + u[:, None], 1.0)
    else:
        g = _richtmyer(s)
        x = np.mod(g[:, None] * k[None, :] + u[:, None], 1.0)
    return np.abs(2.0 * x - 1.0)


def _phi_clipped(z):
    """Normal CDF with hard 0/1 saturation far out, as in Genz's code."""
    out = np.where(z <= -9.0, 0.0, np.where(z >= 9.0, 1.0, ndtr(np.clip(z, -9.0, 9.0))))
    return out


def _reordered_cholesky(cov, a, b):
    """Scaled and permuted lower Cholesky factor for sequential conditioning.

    Variables are pulled forward greedily so the coordinate with the smallest
    conditional cell probability is integrated first, which concentrates the
    variance of the outer coordinates (Genz's ordering).  Rows are rescaled to
    a unit diagonal and the integration limits rescaled to match.  Singular
    directions are tolerated: a zero pivot freezes the coordinate at the
    midpoint of its limits.
    """
    ep = 1e-10
    n = len(a)
    c = np.array(cov, dtype=float)
    ap = np.array(a, dtype=float)
    bp = np.array(b, dtype=float)
    d = np.sqrt(np.maximum(np.diag(c), 0.0))
    for i in range(n):
        if d[i] > 0:
            c[:, i] /= d[i]
            c[i, :] /= d[i]
            ap[i] /= d[i]
            bp[i] /= d[i]
    y = np.zeros(n)
    sqtp = math.sqrt(2.0 * math.pi)
    eps = np.finfo(float).eps
    for k in range(n):
        im = k
        ckk = 0.0
        dem = 1.0
        am = bm = 0.0
        for i in range(k, n):
            if c[i, i] > eps:
                cii = math.sqrt(max(c[i, i], 0.0))
                s = float(c[i, :k] @ y[:k]) if k > 0 else 0.0
                ai = (ap[i] - s) / cii
                bi = (bp[i] - s) / cii
                de = float(_phi_clipped(bi) - _phi_clipped(ai))
                if de <= dem:
                    ckk, dem, am, bm, im = cii, de, ai, bi, i
        if im > k:
            ap[[im, k]] = ap[[k, im]]
            bp[[im, k]] = bp[[k, im]]
            c[im, im] = c[k, k]
            t = c[im, :k].copy()
            c[im, :k] = c[k, :k]
            c[k, :k] = t
            t = c[im + 1 :, im].copy()
            c[im + 1 :, im] = c[im + 1 :, k]
            c[im + 1 :, k] = t
            t = c[k + 1 : im, k].copy()
            c[k + 1 : im, k] = c[im, k + 1 : im].T
            c[im, k + 1 : im] = t.T
        if ckk > ep * (k + 1):
            c[k, k] = ckk
            c[k, k + 1 :] = 0.0
            for i in range(k + 1, n):
                c[i, k] = c[i, k] / ckk
                c[i, k + 1 : i + 1] = c[i, k + 1 : i + 1] - c[i, k] * c[k + 1 : i + 1, k].T
            if abs(dem) > ep:
                with np.errstate(over="ignore"):
                    y[k] = (math.exp(-min(am * am, 1e300) / 2) - math.exp(-min(bm * bm, 1e300) / 2)) / (
                        sqtp * dem
                    )
            else:
                y[k] = (am + bm) / 2
                if am < -10:
                    y[k] = bm
                elif bm > 10:
                    y[k] = am
            c[k, : k + 1] /= ckk
            ap[k] /= ckk
            bp[k] /= ckk
        else:
            c[k:, k] = 0.0
            y[k] = (ap[k] + bp[k]) / 2 if np.isfinite(ap[k] + bp[k]) else 0.0
    return c, ap, bp


def _rqmc_pass(ch, az, bz, n_lattice: int, n_shifts: int, rng: np.random.Generator):
    """One randomized-lattice evaluation of the sequential-conditioning integrand."""
    d = len(az)
    shift_means = np.empty(n_shifts)
    for s_idx in range(n_shifts):
        pts = _shifted_lattice(d - 1, n_lattice, rng)
        vp = np.ones(n_lattice)
        s_acc = np.zeros((d, n_lattice))
        for i in range(d):
            ai = az[i] - s_acc[i]
            bi = bz[i] - s_acc[i]
            c = _phi_clipped(ai)
            dct = _phi_clipped(bi) - c
            np.maximum(dct, 0.0, out=dct)
            vp *= dct
            if i < d - 1:
                arg = np.clip(c + pts[i] * dct, 1e-16, 1.0 - 1e-16)
                yv = ndtri(arg)
                yv[dct <= 0.0] = 0.0
                s_acc[i + 1 :] += ch[i + 1 :, i : i + 1] * yv
        shift_means[s_idx] = float(np.mean(vp))
    p = float(np.mean(shift_means))
    se = float(np.std(shift_means, ddof=1) / math.sqrt(n_shifts)) if n_shifts > 1 else math.inf
    return min(max(p, 0.0), 1.0), se


def box_probability(
    comp: GaussianComponent,
    cell: Cell,
    accuracy: float = DEFAULT_BOX_ACCURACY,
    *,
    rng=None,
    max_points: int = DEFAULT_BOX_BUDGET,
    n_shifts: int = DEFAULT_SHIFTS,
) -> tuple[float, float]:
    """Probability that a draw from ``comp`` lands in an axis-aligned cell.

    Returns ``(probability, std_error)``.  Coordinates whose cell side spans
    the whole line are marginalized away; what remains is computed exactly in
    one dimension, by deterministic panel quadrature in two, and otherwise by
    randomized-lattice QMC with the lattice grown until the standard error
    drops below ``accuracy``.

    Raises
    ------
    BoxAccuracyError
        If the point budget runs out first; carries the achieved std_error.
    """
    if cell.dim != comp.dim:
        raise NumericalError(f"cell dim {cell.dim} != component dim {comp.dim}")
    lower, upper = cell.lower, cell.upper
    keep = ~(np.isneginf(lower) & np.isposinf(upper))
    if not np.any(keep):
        return 1.0, 0.0
    idx = np.where(keep)[0]
    mean = comp.mean[idx]
    cov = comp.cov[np.ix_(idx, idx)]
    a = lower[idx] - mean
    b = upper[idx] - mean
    if idx.size == 1:
        sd = math.sqrt(cov[0, 0])
        return float(_interval_prob_std(a[0] / sd, b[0] / sd)), 0.0
    if idx.size == 2:
        sds = np.sqrt(np.diag(cov))
        rho = cov[0, 1] / (sds[0] * sds[1])
        probs, errs = _bvn_box_batch(
            (a / sds)[None, :], (b / sds)[None, :], rho
        )
        return float(probs[0]), float(errs[0])

    if rng is None:
        rng = np.random.default_rng(0)
    elif isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))

    ch, az, bz = _reordered_cholesky(cov, a, b)
    n_lattice = _START_LATTICE
    spent = 0
    while True:
        p, se = _rqmc_pass(ch, az, bz, n_lattice, n_shifts, rng)
        spent += n_lattice * n_shifts
        if se <= accuracy:
            return p, se
        if spent + 2 * n_lattice * n_shifts > max_points:
            raise BoxAccuracyError(accuracy, se, spent)
        n_lattice *= 2


_BVN_CLIP = 9.5
_BVN_PANELS = 24


def _bvn_panel_eval(lo, span, a2, b2, rho, s, n_panels):
    """One panel-quadrature pass of the bivariate reduction; see below."""
    # Imported here: quadrature pulls NumericalError from this module, so a
    # top-level import would be circular.
    from .quadrature import panel_rule

    nodes01, w_k01, w_g01 = panel_rule(0.0, 1.0, n_panels)
    t = lo[:, None] + span[:, None] * nodes01[None, :]
    dens = np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    upper2 = ndtr((b2[:, None] - rho * t) / s)
    lower2 = ndtr((a2[:, None] - rho * t) / s)
    fv = dens * np.maximum(upper2 - lower2, 0.0)
    vals = span * (fv @ w_k01)
    per_panel = np.abs(
        (fv.reshape(-1, n_panels, 15) * (w_k01 - w_g01).reshape(n_panels, 15)).sum(
            axis=2
        )
    )
    gaps = span * np.minimum(per_panel, (200.0 * per_panel) ** 1.5).sum(axis=1)
    return np.clip(vals, 0.0, 1.0), gaps


def _bvn_box_batch(
    a: np.ndarray, b: np.ndarray, rho: float, n_panels: int = _BVN_PANELS
) -> tuple[np.ndarray, np.ndarray]:
    """Standardized bivariate rectangle probabilities, deterministically.

    ``a``, ``b`` are ``(m, 2)`` standardized bounds.  The rectangle mass is
    reduced to the one-dimensional integral over the first coordinate of
    ``phi(t) * [Phi((b2 - rho t)/s) - Phi((a2 - rho t)/s)]`` with
    ``s = sqrt(1 - rho^2)``, evaluated on shared panelized Kronrod nodes.
    Rows whose Gauss/Kronrod gap stays above 1e-10 (the integrand sharpens
    as ``|rho| -> 1``) are re-done on 4x, then 16x, finer panels.
    Integration is clipped to ``|t| <= 9.5``; the returned bound floors at
    1e-15 to cover that tail and accumulated roundoff.
    """
    m = a.shape[0]
    rho = float(np.clip(rho, -1.0 + 1e-12, 1.0 - 1e-12))
    s = math.sqrt(1.0 - rho * rho)
    lo = np.clip(a[:, 0], -_BVN_CLIP, _BVN_CLIP)
    hi = np.clip(b[:, 0], -_BVN_CLIP, _BVN_CLIP)
    span = hi - lo
    probs = np.zeros(m)
    errs = np.full(m, 1e-15)
    todo = np.where(span > 0)[0]
    panels = n_panels
    for level in range(3):
        if todo.size == 0:
            break
        vals, gaps = _bvn_panel_eval(
            lo[todo], span[todo], a[todo, 1], b[todo, 1], rho, s, panels
        )
        probs[todo] = vals
        errs[todo] = 1e-15 + gaps
        todo = todo[gaps > 1e-10]
        panels *= 4
    return probs, errs


def _box_prob_batch(
    means: np.ndarray,
    cov: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
    n_lattice: int = 128,
    n_shifts: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Box probabilities for many means sharing one covariance.

    One remaining dimension is exact, two reduce to deterministic panel
    quadrature, and three or more fall back to a randomized lattice shared
    across the batch (natural variable order).  Returns
    ``(probs, error_bounds)`` of shape ``(m,)``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    m, d = means.shape
    keep = ~(np.isneginf(lower) & np.isposinf(upper))
    if not np.any(keep):
        return np.ones(m), np.zeros(m)
    idx = np.where(keep)[0]
    a = lower[idx] - means[:, idx]
    b = upper[idx] - means[:, idx]
    if idx.size == 1:
        sd = math.sqrt(cov[idx[0], idx[0]])
        return _interval_prob_std(a[:, 0] / sd, b[:, 0] / sd), np.zeros(m)
    if idx.size == 2:
        sds = np.sqrt(np.diag(cov)[idx])
        rho = cov[idx[0], idx[1]] / (sds[0] * sds[1])
        return _bvn_box_batch(a / sds, b / sds, rho)

    sub = cov[np.ix_(idx, idx)]
    ch = np.linalg.cholesky(sub)
    diag = np.diag(ch).copy()
    d_eff = idx.size
    est = np.empty((n_shifts, m))
    for s_idx in range(n_shifts):
        pts = _shifted_lattice(d_eff - 1, n_lattice, rng)
        vp = np.ones((m, n_lattice))
        s_acc = np.zeros((d_eff, m, n_lattice))
        for i in range(d_eff):
            ai = (a[:, i : i + 1] - s_acc[i]) / diag[i]
            bi = (b[:, i : i + 1] - s_acc[i]) / diag[i]
            c = _phi_clipped(ai)
            dct = _phi_clipped(bi) - c
            np.maximum(dct, 0.0, out=dct)
            vp *= dct
            if i < d_eff - 1:
                arg = np.clip(c + pts[i][None, :] * dct, 1e-16, 1.0 - 1e-16)
                yv = ndtri(arg)
                yv[dct <= 0.0] = 0.0
                s_acc[i + 1 :] += ch[i + 1 :, i, None, None] * yv[None, :, :]
        est[s_idx] = vp.mean(axis=1)
    probs = np.clip(est.mean(axis=0), 0.0, 1.0)
    ses = est.std(axis=0, ddof=1) / math.sqrt(n_shifts)
    return probs, ses


def _log_box_lower_batch(means, cov, lower, upper) -> np.ndarray:
    """Log-space lower bounds on box probabilities for engine-floored cells.

    The box engines above saturate the normal CDF roughly nine standard
    deviations out and return exactly zero beyond that -- harmless in
    probability scale, fatal to log-scale consumers such as the KL
    integrand.  This bound never floors: inscribe a finite sub-box of one
    standard deviation per side (clipped to the cell) around the cell's
    capped interior point and multiply its volume by the smallest density
    over it, which sits at a corner because the Gaussian log density is
    concave.  With a single retained coordinate the exact stable log
    interval probability is returned instead of a bound.

    ``means`` is ``(m, d)`` with one shared covariance; the result has
    shape ``(m,)``.  A ``-inf`` entry means even the bound degenerated
    (overflowing parameters), i.e. a genuine numerical zero.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    m = means.shape[0]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    keep = ~(np.isneginf(lower) & np.isposinf(upper))
    if not np.any(keep):
        return np.zeros(m)
    idx = np.where(keep)[0]
    sub = cov[np.ix_(idx, idx)]
    mu = means[:, idx]
    if idx.size == 1:
        sd = math.sqrt(sub[0, 0])
        with np.errstate(over="ignore"):
            return np.asarray(
                _log_interval_prob_std(
                    (lower[idx[0]] - mu[:, 0]) / sd, (upper[idx[0]] - mu[:, 0]) / sd
                )
            ).reshape(m)
    cell = Cell(lower[idx], upper[idx])
    x = _cell_interior_point(cell)
    sd = np.sqrt(np.diag(sub))
    lo = np.maximum(cell.lower, x - sd)
    hi = np.minimum(cell.upper, x + sd)
    log_vol = float(np.log(hi - lo).sum())
    corners = np.stack(
        np.meshgrid(*[(lo[j], hi[j]) for j in range(idx.size)], indexing="ij"),
        axis=-1,
    ).reshape(-1, idx.size)
    ch = np.linalg.cholesky(sub)
    log_det_half = float(np.sum(np.log(np.diag(ch))))
    with np.errstate(over="ignore", invalid="ignore"):
        dev = corners[None, :, :] - mu[:, None, :]
        z = solve_triangular(ch, dev.reshape(-1, idx.size).T, lower=True)
        quad = np.einsum("ij,ij->j", z, z).reshape(m, -1)
        # The smallest density over the sub-box sits at the corner with the
        # largest quadratic form (the log density is concave).
        out = log_vol - log_det_half - 0.5 * (
            idx.size * _LOG_2PI + quad.max(axis=1)
        )
    out[np.isnan(out)] = -np.inf
    return out


# ---------------------------------------------------------------------------
# Truncated draws
# ---------------------------------------------------------------------------


def _tilted_tail_draw(rng: np.random.Generator, a: float, b: float) -> float:
    """Standard normal draw conditioned on [a, b) with a >= _TAIL_SWITCH.

    Exponential-tilting rejection with Robert's optimal rate; falls back to a
    uniform proposal when the interval is too thin for the exponential to
    land inside it often enough.
    """
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    max_iter = 100_000
    if b < math.inf and lam * (b - a) < 1e-2:
        for _ in range(max_iter):
            x = rng.uniform(a, b)
            if math.log(max(rng.random(), 1e-300)) <= 0.5 * (a * a - x * x):
                return x
    else:
        for _ in range(max_iter):
            x = a - math.log1p(-rng.random()) / lam
            if b < math.inf and x >= b:
                continue
            if math.log(max(rng.random(), 1e-300)) <= -0.5 * (x - lam) ** 2:
                return x
    raise NumericalError(f"tail rejection failed on [{a}, {b})")


def truncated_normal_draw(
    rng: np.random.Generator, mean: float, sd: float, lo: float, hi: float
) -> float:
    """One exact draw from N(mean, sd^2) conditioned on [lo, hi).

    Inverse-CDF in the bulk; beyond six standardized units the draw switches
    to exponential-tilting rejection, which stays exact where the CDF
    saturates.
    """
    if not hi > lo:
        raise ValueError(f"empty interval [{lo}, {hi})")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if a >= _TAIL_SWITCH:
        z = _tilted_tail_draw(rng, a, b)
    elif b <= -_TAIL_SWITCH:
        z = -_tilted_tail_draw(rng, -b, -a)
    elif a >= 0.0:
        # work on the survival side so nothing saturates
        sa, sb = ndtr(-a), ndtr(-b)
        z = -float(ndtri(max(rng.uniform(sb, sa), 1e-300)))
    else:
        fa, fb = ndtr(a), ndtr(b)
        z = float(ndtri(min(max(rng.uniform(fa, fb), 1e-300), 1.0 - 1e-16)))
    x = mean + sd * z
    if x < lo:
        x = lo
    if x >= hi:
        x = np.nextafter(hi, -math.inf)
    return float(x)


def _cell_interior_point(cell: Cell, cap: float = 6.0) -> np.ndarray:
    """Midpoint of a cell with infinite sides replaced by +-cap pseudo-bounds."""
    lo = cell.lower.copy()
    hi = cell.upper.copy()
    for j in range(cell.dim):
        if np.isneginf(lo[j]):
            lo[j] = min(-cap, hi[j] - 2.0) if np.isfinite(hi[j]) else -cap
        if np.isposinf(hi[j]):
            hi[j] = max(cap, lo[j] + 2.0)
    return 0.5 * (lo + hi)


def _coordinate_gibbs(x, mean, prec, cond_sd, lower, upper, sweeps, rng):
    """In-place coordinate Gibbs over a box given a precision matrix.

    ``x`` must start inside the box; each pass redraws every coordinate
    exactly from its univariate truncated conditional.
    """
    for _ in range(sweeps):
        for j in range(x.size):
            dev = x - mean
            dev[j] = 0.0
            mu_j = mean[j] - (prec[j] @ dev) * cond_sd[j] ** 2
            x[j] = truncated_normal_draw(
                rng, float(mu_j), float(cond_sd[j]), lower[j], upper[j]
            )
    return x


def sample_truncated(
    comp: GaussianComponent,
    cell: Cell,
    init=None,
    sweeps: int = 4,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Coordinate-Gibbs draw from ``comp`` restricted to an axis-aligned cell.

    Each of ``sweeps`` passes redraws every coordinate exactly from its
    univariate truncated conditional.  ``init`` must lie inside the cell
    (default: a capped cell midpoint).  The result always lies in the cell.
    """
    if cell.dim != comp.dim:
        raise NumericalError(f"cell dim {cell.dim} != component dim {comp.dim}")
    if rng is None:
        rng = np.random.default_rng(0)
    if init is None:
        x = _cell_interior_point(cell)
    else:
        x = np.array(init, dtype=float)
        if not cell.contains(x):
            raise ValueError(f"init point {x.tolist()} outside cell")
    if comp.dim == 1:
        x[0] = truncated_normal_draw(
            rng, float(comp.mean[0]), math.sqrt(comp.cov[0, 0]), cell.lower[0], cell.upper[0]
        )
        return x
    prec = cho_solve((comp.chol, True), np.eye(comp.dim))
    cond_sd = 1.0 / np.sqrt(np.diag(prec))
    return _coordinate_gibbs(
        x, comp.mean, prec, cond_sd, cell.lower, cell.upper, sweeps, rng
    )
