"""Divergences between mixed densities: KL and L1, both computation paths."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.special import ndtr

from roundmix import (
    DivergenceConfig,
    DivergenceEstimate,
    MixedDensity,
    MixedPoint,
    MixedSchema,
    MonotoneMap,
    PartitionSpec,
    SchemaError,
    empirical_l1,
    kl_mixed,
    l1_mixed,
)
from roundmix.divergence import METHOD_DETERMINISTIC, METHOD_MONTE_CARLO
from tests.conftest import gaussian_mixture, std_mixture

# Shifting a unit-variance latent mean to -0.40879584... puts success
# probability 1 - ndtr(0.40879584...) = 0.34134474... on the upper cell.
SHIFT = -0.4087958412195714
KL_BINARY = 0.0530614911309345
L1_BINARY = 0.31731050786291415


def shifted(mean, p=1, var=1.0):
    means = np.zeros((1, p))
    means[0, 0] = mean
    return gaussian_mixture([1.0], means, [np.eye(p) * var])


def gaussian_kl(m0, c0, m1, c1):
    m0, m1 = np.asarray(m0, dtype=float), np.asarray(m1, dtype=float)
    c0, c1 = np.asarray(c0, dtype=float), np.asarray(c1, dtype=float)
    p = m0.size
    c1i = np.linalg.inv(c1)
    d = m1 - m0
    return 0.5 * (
        np.trace(c1i @ c0)
        + d @ c1i @ d
        - p
        + math.log(np.linalg.det(c1) / np.linalg.det(c0))
    )


def equal_cov_l1(m0, m1, cov):
    """L1 between equal-covariance Gaussians: 2(2*Phi(delta/2) - 1)."""
    d = np.asarray(m1, dtype=float) - np.asarray(m0, dtype=float)
    delta = math.sqrt(d @ np.linalg.solve(np.asarray(cov, dtype=float), d))
    return 2.0 * (2.0 * ndtr(delta / 2.0) - 1.0)


# ---------------------------------------------------------------------------
# Discrete-only deterministic path (p1 = 0)
# ---------------------------------------------------------------------------


def test_binary_kl_closed_form(binary_schema):
    f0 = MixedDensity(binary_schema, std_mixture(1))
    f = MixedDensity(binary_schema, shifted(SHIFT))
    est = kl_mixed(f0, f)
    assert est.method == METHOD_DETERMINISTIC
    assert est.value == pytest.approx(KL_BINARY, abs=1e-10)
    assert abs(est.value - KL_BINARY) <= est.std_error
    assert est.tail_mass_tol == DivergenceConfig().tail_tol


def test_binary_l1_closed_form(binary_schema):
    f0 = MixedDensity(binary_schema, std_mixture(1))
    f = MixedDensity(binary_schema, shifted(SHIFT))
    est = l1_mixed(f0, f)
    assert est.method == METHOD_DETERMINISTIC
    assert est.value == pytest.approx(L1_BINARY, abs=1e-10)


def test_binary_shift_half_nonexpansion(binary_schema):
    """Thresholding N(0,1) against N(0.5,1) shrinks both divergences."""
    f0 = MixedDensity(binary_schema, std_mixture(1))
    f = MixedDensity(binary_schema, shifted(0.5))
    kl = kl_mixed(f0, f)
    l1 = l1_mixed(f0, f)
    assert kl.value == pytest.approx(0.07928190788119227, abs=1e-10)
    assert l1.value == pytest.approx(0.38292492254802624, abs=1e-10)
    assert kl.value <= 0.125  # latent KL
    assert l1.value <= 2.0 * (2.0 * ndtr(0.25) - 1.0)  # latent L1


def test_count_kl_matches_cell_sum(count_schema):
    f0 = MixedDensity(count_schema, std_mixture(1))
    f = MixedDensity(count_schema, shifted(0.3))
    est = kl_mixed(f0, f)

    def cell_prob(mean, k):
        if k == 0:
            return ndtr(0.0 - mean)
        # survival-function form stays accurate deep into the upper tail
        return ndtr(mean - (k - 1)) - ndtr(mean - k)

    # contributions beyond k = 12 are below 1e-25
    oracle = sum(
        cell_prob(0.0, k) * math.log(cell_prob(0.0, k) / cell_prob(0.3, k))
        for k in range(0, 13)
    )
    assert est.value == pytest.approx(oracle, abs=1e-4)
    assert abs(est.value - oracle) <= est.std_error + 1e-9


def test_identical_densities_have_zero_divergence(binary_schema):
    f0 = MixedDensity(binary_schema, std_mixture(1))
    assert kl_mixed(f0, f0).value == pytest.approx(0.0, abs=1e-12)
    assert l1_mixed(f0, f0).value == pytest.approx(0.0, abs=1e-12)


def test_kl_finite_when_far_count_cells_floor_the_engines():
    """Widely separated count blocks push the first density's enumerated
    cells 20+ sd from the second, where the box engines return exactly
    zero.  Both laws still have full support, so the KL must come back
    finite (and below the latent KL) instead of a phantom violation."""
    schema = MixedSchema(
        partitions=(PartitionSpec.from_cuts((0.0,)), PartitionSpec.counting())
    )
    m0, c0 = [0.0, 5.0], np.diag([1.0, 2.25])
    m1, c1 = [0.3, 0.5], np.diag([1.0, 0.25])
    f0 = MixedDensity(schema, gaussian_mixture([1.0], [m0], [c0]))
    f = MixedDensity(schema, gaussian_mixture([1.0], [m1], [c1]))
    est = kl_mixed(f0, f)
    assert est.method == METHOD_DETERMINISTIC
    assert est.note == ""
    assert math.isfinite(est.value) and math.isfinite(est.std_error)
    assert est.value > 0.0
    # rounding cannot add information: stay below the latent divergence
    assert est.value <= gaussian_kl(m0, c0, m1, c1) + est.std_error


def test_deterministic_kl_support_violation_still_infinite():
    """Parameters that overflow even the log scale remain a violation on
    the exact-sum path, not just the Monte Carlo one."""
    schema = MixedSchema(
        partitions=(
            PartitionSpec.from_cuts((0.0,)),
            PartitionSpec.from_cuts((0.0,)),
        )
    )
    f0 = MixedDensity(schema, std_mixture(2))
    f = MixedDensity(schema, gaussian_mixture([1.0], [[1e160, 0.0]], [np.eye(2)]))
    with np.errstate(over="ignore", invalid="ignore"):
        kl = kl_mixed(f0, f)
        l1 = l1_mixed(f0, f)
    assert kl.method == METHOD_DETERMINISTIC
    assert kl.value == math.inf
    assert "support violation" in kl.note
    assert math.isfinite(l1.value) and 0.0 < l1.value <= 2.0 + 1e-9


# ---------------------------------------------------------------------------
# Continuous deterministic path (quadrature)
# ---------------------------------------------------------------------------


def pure_cont_density(mixture, p):
    return MixedDensity(MixedSchema(cont_maps=(MonotoneMap(),) * p), mixture)


def test_gaussian_1d_kl_is_half():
    f0 = pure_cont_density(std_mixture(1), 1)
    f = pure_cont_density(shifted(1.0), 1)
    est = kl_mixed(f0, f)
    assert est.method == METHOD_DETERMINISTIC
    assert est.value == pytest.approx(0.5, abs=1e-7)
    assert abs(est.value - 0.5) <= est.std_error


def test_gaussian_1d_l1_closed_form():
    f0 = pure_cont_density(std_mixture(1), 1)
    f = pure_cont_density(shifted(1.0), 1)
    est = l1_mixed(f0, f)
    assert est.value == pytest.approx(0.7658498450960525, abs=1e-6)


def test_gaussian_2d_kl_closed_form():
    m1, c1 = [0.4, -0.2], [[1.2, 0.1], [0.1, 0.8]]
    c0 = [[1.0, 0.3], [0.3, 1.0]]
    f0 = pure_cont_density(gaussian_mixture([1.0], [[0.0, 0.0]], [c0]), 2)
    f = pure_cont_density(gaussian_mixture([1.0], [m1], [c1]), 2)
    est = kl_mixed(f0, f)
    assert est.method == METHOD_DETERMINISTIC
    assert est.value == pytest.approx(gaussian_kl([0, 0], c0, m1, c1), abs=1e-5)


def test_gaussian_2d_l1_equal_cov():
    cov = [[1.0, 0.4], [0.4, 1.0]]
    f0 = pure_cont_density(gaussian_mixture([1.0], [[0.0, 0.0]], [cov]), 2)
    f = pure_cont_density(gaussian_mixture([1.0], [[0.6, -0.3]], [cov]), 2)
    est = l1_mixed(f0, f)
    assert est.value == pytest.approx(equal_cov_l1([0, 0], [0.6, -0.3], cov), abs=1e-4)


def test_mixed_block_kl(cont_binary_schema):
    """Identity coordinate + binary cut: KL still below its latent bound."""
    f0 = MixedDensity(cont_binary_schema, std_mixture(2))
    f = MixedDensity(
        cont_binary_schema,
        gaussian_mixture([1.0], [[0.5, 0.5]], [np.eye(2)]),
    )
    est = kl_mixed(f0, f)
    assert est.method == METHOD_DETERMINISTIC
    latent_kl = 0.5 * (0.5**2 + 0.5**2)
    assert 0.0 < est.value <= latent_kl + 1e-9


# ---------------------------------------------------------------------------
# Monte Carlo path (p1 > max_quad_dims)
# ---------------------------------------------------------------------------


def test_mc_kl_within_band():
    m = [0.6, -0.3, 0.2]
    f0 = pure_cont_density(std_mixture(3), 3)
    f = pure_cont_density(gaussian_mixture([1.0], [m], [np.eye(3)]), 3)
    est = kl_mixed(f0, f)
    assert est.method == METHOD_MONTE_CARLO
    assert est.tail_mass_tol == 0.0
    truth = 0.5 * float(np.dot(m, m))
    assert abs(est.value - truth) <= 4.0 * est.std_error


def test_mc_l1_within_band():
    m = [0.6, -0.3, 0.2]
    f0 = pure_cont_density(std_mixture(3), 3)
    f = pure_cont_density(gaussian_mixture([1.0], [m], [np.eye(3)]), 3)
    est = l1_mixed(f0, f)
    assert est.method == METHOD_MONTE_CARLO
    truth = equal_cov_l1([0, 0, 0], m, np.eye(3))
    assert abs(est.value - truth) <= 4.0 * est.std_error
    assert 0.0 <= est.value <= 2.0


def test_mc_reproducible_and_seed_sensitive():
    f0 = pure_cont_density(std_mixture(3), 3)
    f = pure_cont_density(gaussian_mixture([1.0], [[0.3, 0, 0]], [np.eye(3)]), 3)
    a = kl_mixed(f0, f, DivergenceConfig(seed=7))
    b = kl_mixed(f0, f, DivergenceConfig(seed=7))
    c = kl_mixed(f0, f, DivergenceConfig(seed=8))
    assert a.value == b.value and a.std_error == b.std_error
    assert a.value != c.value


def test_routes_agree_on_shared_instance():
    """Quadrature and Monte Carlo answer the same question on one pair."""
    c0 = [[1.0, 0.2], [0.2, 0.7]]
    f0 = pure_cont_density(gaussian_mixture([1.0], [[0.0, 0.0]], [c0]), 2)
    f = pure_cont_density(
        gaussian_mixture(
            [0.5, 0.5], [[0.4, 0.0], [-0.4, 0.2]], [np.eye(2), np.eye(2)]
        ),
        2,
    )
    det = kl_mixed(f0, f)
    mc = kl_mixed(f0, f, DivergenceConfig(max_quad_dims=1, mc_samples=40_000))
    assert det.method == METHOD_DETERMINISTIC
    assert mc.method == METHOD_MONTE_CARLO
    assert abs(det.value - mc.value) <= 4.0 * mc.std_error + det.std_error


def test_deterministic_guard_above_two_dims():
    f0 = pure_cont_density(std_mixture(3), 3)
    f = pure_cont_density(shifted(0.5, p=3), 3)
    with pytest.raises(NotImplementedError):
        kl_mixed(f0, f, DivergenceConfig(max_quad_dims=5))


# ---------------------------------------------------------------------------
# Support violations: KL blows up, L1 stays on its bound
# ---------------------------------------------------------------------------


def violating_pair():
    f0 = pure_cont_density(std_mixture(3), 3)
    # A mean this far out underflows the second log density to -inf at
    # every sample of the first: a genuine support violation in floats.
    f = pure_cont_density(gaussian_mixture([1.0], [[1e160, 0, 0]], [np.eye(3)]), 3)
    return f0, f


def test_kl_support_violation_is_infinite():
    f0, f = violating_pair()
    with np.errstate(over="ignore", invalid="ignore"):
        est = kl_mixed(f0, f)
    assert est.value == math.inf
    assert "support violation" in est.note


def test_l1_stays_finite_on_support_violation():
    f0, f = violating_pair()
    with np.errstate(over="ignore", invalid="ignore"):
        est = l1_mixed(f0, f)
    assert est.value == pytest.approx(2.0, abs=1e-6)
    assert math.isfinite(est.value)


# ---------------------------------------------------------------------------
# Config and schema validation
# ---------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        DivergenceConfig(tail_tol=0.0)
    with pytest.raises(ValueError):
        DivergenceConfig(tail_tol=0.02)
    with pytest.raises(ValueError):
        DivergenceConfig(mc_samples=1)
    with pytest.raises(ValueError):
        DivergenceConfig(max_quad_dims=-1)
    DivergenceConfig(tail_tol=0.01)  # boundary is legal


def test_schema_mismatch_rejected(binary_schema, count_schema):
    f0 = MixedDensity(binary_schema, std_mixture(1))
    f = MixedDensity(count_schema, std_mixture(1))
    with pytest.raises(SchemaError):
        kl_mixed(f0, f)
    with pytest.raises(SchemaError):
        l1_mixed(f0, f)


# ---------------------------------------------------------------------------
# Empirical discrete-marginal L1
# ---------------------------------------------------------------------------


def test_empirical_l1_binary_frequencies(binary_schema):
    f = MixedDensity(binary_schema, std_mixture(1))
    data = [MixedPoint([], [1])] * 30 + [MixedPoint([], [0])] * 70
    est = empirical_l1(data, f)
    assert est.value == pytest.approx(0.4, abs=1e-9)
    assert est.method == METHOD_DETERMINISTIC


def test_empirical_l1_pure_continuous_is_zero():
    f = pure_cont_density(std_mixture(1), 1)
    est = empirical_l1([MixedPoint([0.1], [])], f)
    assert est == DivergenceEstimate(
        0.0, 0.0, METHOD_DETERMINISTIC, DivergenceConfig().tail_tol
    )


def test_empirical_l1_validation(binary_schema):
    f = MixedDensity(binary_schema, std_mixture(1))
    with pytest.raises(ValueError):
        empirical_l1([], f)
    with pytest.raises(SchemaError):
        empirical_l1([MixedPoint([0.0], [1])], f)
