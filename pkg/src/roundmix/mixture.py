"""Finite Gaussian mixtures on the latent scale, plus their text format.

A mixture is serialized to a single line of ASCII floats (17 significant
digits, enough to round-trip IEEE doubles), which makes a posterior-draws
file a plain line-per-mixture text file.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from roundmix.gaussian import GaussianComponent, log_density, sample as gaussian_sample

__all__ = [
    "LatentMixture",
    "log_density_latent",
    "sample_latent",
    "mixture_to_line",
    "mixture_from_line",
    "save_draws",
    "load_draws",
]

_WEIGHT_TOL = 1e-8


@dataclass(eq=False)
class LatentMixture:
    """Weighted Gaussian mixture over the latent space.

    Weights must be nonnegative and sum to one within 1e-8; components must
    share a dimension.  Zero weights are legal (truncated stick-breaking
    leaves many) and contribute nothing to densities or draws.
    """

    weights: np.ndarray
    components: tuple[GaussianComponent, ...]

    def __post_init__(self) -> None:
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.components = tuple(self.components)
        if self.weights.size != len(self.components):
            raise ValueError(
                f"{self.weights.size} weights for {len(self.components)} components"
            )
        if self.weights.size == 0:
            raise ValueError("mixture needs at least one component")
        if np.any(self.weights < 0.0):
            raise ValueError("negative mixture weight")
        total = float(self.weights.sum())
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"mixture weights sum to {total!r}, not 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components disagree on dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)


def log_density_latent(mixture: LatentMixture, x) -> float | np.ndarray:
    """Mixture log density at ``(p,)`` or batched ``(m, p)`` points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    per_comp = np.empty((mixture.n_components, pts.shape[0]))
    for k, comp in enumerate(mixture.components):
        per_comp[k] = log_density(comp, pts)
    with np.errstate(divide="ignore"):
        logw = np.log(mixture.weights)
    out = logsumexp(per_comp + logw[:, None], axis=0)
    return float(out[0]) if single else out


def sample_latent(
    mixture: LatentMixture, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` latent vectors: component labels first, then Gaussian draws."""
    labels = rng.choice(mixture.n_components, size=n, p=mixture.weights)
    out = np.empty((n, mixture.dim))
    for k in range(mixture.n_components):
        mask = labels == k
        m = int(mask.sum())
        if m:
            out[mask] = gaussian_sample(mixture.components[k], rng, size=m)
    return out


# ---------------------------------------------------------------------------
# Text serialization (one mixture per line)
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def mixture_to_line(mixture: LatentMixture) -> str:
    """Serialize to one whitespace-separated line.

    Layout: ``p K`` then, per component, ``weight mean[p] cov[p*p]`` with the
    covariance in row-major order, all floats at 17 significant digits.
    """
    p = mixture.dim
    parts = [str(p), str(mixture.n_components)]
    for w, comp in zip(mixture.weights, mixture.components):
        parts.append(_fmt(w))
        parts.extend(_fmt(v) for v in comp.mean)
        parts.extend(_fmt(v) for v in comp.cov.reshape(-1))
    return " ".join(parts)


def mixture_from_line(line: str) -> LatentMixture:
    """Parse one serialized mixture line (inverse of :func:`mixture_to_line`)."""
    tokens = line.split()
    if len(tokens) < 2:
        raise ValueError("mixture line needs at least 'p K'")
    try:
        p = int(tokens[0])
        k = int(tokens[1])
    except ValueError:
        raise ValueError(f"bad mixture header {tokens[:2]!r}") from None
    stride = 1 + p + p * p
    expected = 2 + k * stride
    if len(tokens) != expected:
        raise ValueError(
            f"mixture line has {len(tokens)} tokens, expected {expected} "
            f"for p={p}, K={k}"
        )
    vals = np.array([float(t) for t in tokens[2:]], dtype=float)
    weights = np.empty(k)
    comps = []
    for i in range(k):
        block = vals[i * stride : (i + 1) * stride]
        weights[i] = block[0]
        mean = block[1 : 1 + p]
        cov = block[1 + p :].reshape(p, p)
        comps.append(GaussianComponent(mean, cov))
    return LatentMixture(weights, tuple(comps))


def save_draws(mixtures, path) -> None:
    """Write mixtures one per line (the posterior draws file format)."""
    with open(path, "w", encoding="ascii") as fh:
        for m in mixtures:
            fh.write(mixture_to_line(m))
            fh.write("\n")


def load_draws(path) -> list[LatentMixture]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(mixture_from_line(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from None
    return out
