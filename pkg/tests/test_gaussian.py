"""Gaussian primitives: densities, conditionals, box probabilities, truncation."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr
from scipy.stats import kstest, multivariate_normal

from roundmix import (
    BoxAccuracyError,
    Cell,
    GaussianComponent,
    NumericalError,
    box_probability,
    condition,
    log_density,
    sample,
    sample_truncated,
)
from roundmix.gaussian import (
    _interval_prob_std,
    _log_box_lower_batch,
    _log_interval_prob_std,
    marginal,
    repair_spd,
    truncated_normal_draw,
)
from tests.conftest import random_spd

INF = math.inf


# ---------------------------------------------------------------------------
# Component construction and densities
# ---------------------------------------------------------------------------


def test_component_validates_covariance():
    comp = GaussianComponent(np.zeros(2), np.array([[2.0, 0.5], [0.5, 1.0]]))
    np.testing.assert_allclose(comp.chol @ comp.chol.T, comp.cov, rtol=1e-10)
    with pytest.raises(NumericalError):
        GaussianComponent(np.zeros(2), np.array([[1.0, 0.9], [0.1, 1.0]]))
    with pytest.raises(NumericalError):
        GaussianComponent(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NumericalError):
        GaussianComponent(np.zeros(2), np.eye(3))
    with pytest.raises(NumericalError):
        GaussianComponent(np.array([np.nan]), np.eye(1))


def test_log_density_closed_forms():
    std1 = GaussianComponent([0.0], [[1.0]])
    assert log_density(std1, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)
    std2 = GaussianComponent(np.zeros(2), np.eye(2))
    assert log_density(std2, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)
    wide = GaussianComponent([0.0], [[4.0]])
    assert log_density(wide, [2.0]) == pytest.approx(
        -0.5 * math.log(8 * math.pi) - 0.5, abs=1e-14
    )


def test_log_density_matches_scipy():
    rng = np.random.default_rng(11)
    for p in (1, 2, 4):
        mean = rng.normal(size=p)
        cov = random_spd(rng, p)
        comp = GaussianComponent(mean, cov)
        xs = rng.normal(size=(6, p))
        ref = multivariate_normal(mean=mean, cov=cov).logpdf(xs)
        np.testing.assert_allclose(log_density(comp, xs), ref, atol=1e-10)


def test_repair_spd():
    fixed = repair_spd(np.array([[1.0, 1.0], [1.0, 1.0]]))
    np.linalg.cholesky(fixed)  # must not raise
    with pytest.raises(NumericalError):
        repair_spd(np.array([[1.0, 0.0], [0.0, -5.0]]))


# ---------------------------------------------------------------------------
# Marginals and conditionals
# ---------------------------------------------------------------------------


def test_condition_independent_coordinates():
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    cond = condition(comp, [0], [5.0])
    assert cond.mean[0] == 0.0
    assert cond.cov[0, 0] == 1.0


def test_condition_bivariate_textbook():
    comp = GaussianComponent(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    cond = condition(comp, [0], [1.0])
    assert cond.mean[0] == pytest.approx(0.5, abs=1e-14)
    assert cond.cov[0, 0] == pytest.approx(0.75, abs=1e-14)


def test_condition_trivariate_schur():
    cov = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]])
    comp = GaussianComponent(np.zeros(3), cov)
    cond = condition(comp, [2], [0.0])
    np.testing.assert_allclose(cond.mean, [0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(cond.cov, [[2.0, 1.0], [1.0, 1.5]], atol=1e-12)


def test_condition_factorizes_the_density():
    """log N(x) = log N(x_obs) + log N(x_rest | x_obs) for random instances."""
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = int(rng.integers(2, 5))
        comp = GaussianComponent(rng.normal(size=p), random_spd(rng, p))
        x = rng.normal(size=p)
        n_obs = int(rng.integers(1, p))
        obs = rng.choice(p, size=n_obs, replace=False)
        rest = np.setdiff1d(np.arange(p), obs)
        joint = log_density(comp, x)
        split = log_density(marginal(comp, obs), x[obs]) + log_density(
            condition(comp, obs, x[obs]), x[rest]
        )
        assert joint == pytest.approx(split, abs=1e-9)


def test_condition_input_validation():
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    with pytest.raises(NumericalError):
        condition(comp, [0, 1], [0.0, 0.0])  # nothing left
    with pytest.raises(NumericalError):
        condition(comp, [0, 0], [0.0, 0.0])
    with pytest.raises(NumericalError):
        condition(comp, [5], [0.0])


# ---------------------------------------------------------------------------
# Box probabilities
# ---------------------------------------------------------------------------


def test_box_probability_univariate_exact():
    comp = GaussianComponent([0.0], [[1.0]])
    p, se = box_probability(comp, Cell([-INF], [0.0]))
    assert (p, se) == (0.5, 0.0)
    p, _ = box_probability(comp, Cell([-1.0], [1.0]))
    assert p == pytest.approx(2 * ndtr(1.0) - 1.0, abs=1e-15)


def test_box_probability_full_space_is_one():
    comp = GaussianComponent(np.zeros(3), np.eye(3))
    assert box_probability(comp, Cell([-INF] * 3, [INF] * 3)) == (1.0, 0.0)


def test_box_probability_independent_orthant():
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    p, se = box_probability(comp, Cell([0.0, 0.0], [INF, INF]))
    assert p == pytest.approx(0.25, abs=1e-12)
    assert se < 1e-9


def test_box_probability_correlated_orthant():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    comp = GaussianComponent(np.zeros(2), cov)
    p, se = box_probability(comp, Cell([0.0, 0.0], [INF, INF]))
    exact = 0.25 + math.asin(0.5) / (2 * math.pi)
    assert p == pytest.approx(exact, abs=1e-12)


def test_box_probability_additivity_partition():
    """Cells tiling the plane have probabilities summing to one."""
    rng = np.random.default_rng(3)
    comp = GaussianComponent(rng.normal(size=2), random_spd(rng, 2))
    edges = [-INF, -0.7, 0.4, INF]
    total, bound = 0.0, 0.0
    for i in range(3):
        for j in range(3):
            p, se = box_probability(
                comp, Cell([edges[i], edges[j]], [edges[i + 1], edges[j + 1]])
            )
            total += p
            bound += se
    assert abs(total - 1.0) <= bound + 1e-12


def test_box_probability_trivariate_vs_product():
    """Diagonal covariance: the box factorizes into univariate intervals."""
    comp = GaussianComponent(np.array([0.2, -0.1, 0.5]), np.diag([1.0, 2.0, 0.5]))
    cell = Cell([-1.0, 0.0, -INF], [1.0, INF, 1.0])
    rng = np.random.default_rng(71)
    p, se = box_probability(comp, cell, accuracy=5e-6, rng=rng)
    exact = 1.0
    for j, (lo, hi) in enumerate(zip(cell.lower, cell.upper)):
        sd = math.sqrt(comp.cov[j, j])
        exact *= ndtr((hi - comp.mean[j]) / sd) - ndtr((lo - comp.mean[j]) / sd)
    assert abs(p - exact) <= 4 * se + 1e-9


def test_box_probability_trivariate_vs_monte_carlo():
    rng = np.random.default_rng(9)
    comp = GaussianComponent(rng.normal(size=3) * 0.3, random_spd(rng, 3))
    cell = Cell([-0.5, -INF, 0.0], [1.5, 0.8, INF])
    p, se = box_probability(comp, cell, accuracy=5e-6, rng=np.random.default_rng(1))
    draws = sample(comp, np.random.default_rng(2), size=400_000)
    inside = np.all((draws >= cell.lower) & (draws < cell.upper), axis=1)
    freq = inside.mean()
    mc_se = math.sqrt(freq * (1 - freq) / draws.shape[0])
    assert abs(p - freq) <= 4 * (se + mc_se)


def test_box_probability_deterministic_under_seed():
    comp = GaussianComponent(np.zeros(3), random_spd(np.random.default_rng(0), 3))
    cell = Cell([0.0, 0.0, 0.0], [1.0, 2.0, 0.5])
    p1, se1 = box_probability(comp, cell, rng=np.random.default_rng(42))
    p2, se2 = box_probability(comp, cell, rng=np.random.default_rng(42))
    assert (p1, se1) == (p2, se2)


def test_box_probability_budget_error_reports_achieved():
    comp = GaussianComponent(np.zeros(3), random_spd(np.random.default_rng(5), 3))
    cell = Cell([0.0, 0.0, 0.0], [0.5, 0.5, 0.5])
    with pytest.raises(BoxAccuracyError) as info:
        box_probability(
            comp, cell, accuracy=1e-12, rng=np.random.default_rng(0), max_points=4096
        )
    assert info.value.achieved > 1e-12
    assert info.value.points <= 4096


def test_box_probability_dimension_mismatch():
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    with pytest.raises(NumericalError):
        box_probability(comp, Cell([0.0], [1.0]))


@settings(deadline=None, max_examples=30)
@given(
    a=st.floats(min_value=-6.0, max_value=5.0),
    width=st.floats(min_value=0.05, max_value=8.0),
)
def test_univariate_box_matches_cdf(a, width):
    comp = GaussianComponent([0.0], [[1.0]])
    p, _ = box_probability(comp, Cell([a], [a + width]))
    assert p == pytest.approx(float(ndtr(a + width) - ndtr(a)), abs=1e-13)


def test_log_interval_prob_agrees_in_bulk():
    a = np.array([-1.0, 0.2, -3.0, -INF, 1.0])
    b = np.array([0.5, 1.7, -2.0, 0.0, INF])
    np.testing.assert_allclose(
        _log_interval_prob_std(a, b), np.log(_interval_prob_std(a, b)), rtol=1e-12
    )


def test_log_interval_prob_far_tail_matches_mills_ratio():
    """At 45 sd the probability underflows; the log form matches the
    three-term Mills-ratio expansion of the survival function."""
    z = 45.0
    expansion = (
        -0.5 * z * z
        - 0.5 * math.log(2 * math.pi)
        - math.log(z)
        + math.log1p(-1.0 / z**2 + 3.0 / z**4)
    )
    v = float(_log_interval_prob_std(45.0, 46.0))
    assert v == pytest.approx(expansion, abs=1e-4)
    # the probability-scale routine has long since floored here
    assert float(_interval_prob_std(45.0, 46.0)) == 0.0


def test_log_interval_prob_degenerate_cases():
    assert float(_log_interval_prob_std(2.0, 2.0)) == -INF
    with np.errstate(over="ignore"):
        assert float(_log_interval_prob_std(1e160, 2e160)) == -INF


def test_log_box_lower_bound_is_a_lower_bound():
    """exp(bound) never exceeds the box probability, bulk or correlated."""
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    lb = float(
        _log_box_lower_batch(comp.mean[None], comp.cov, np.zeros(2), np.ones(2))[0]
    )
    assert lb <= math.log((ndtr(1.0) - 0.5) ** 2)

    cov = np.array([[1.0, 0.6], [0.6, 1.44]])
    lower = np.array([2.0, -INF])
    upper = np.array([3.0, 0.0])
    means = np.array([[0.0, 0.0], [1.5, -0.5], [-2.0, 3.0]])
    lbs = _log_box_lower_batch(means, cov, lower, upper)
    for i in range(3):
        p, se = box_probability(GaussianComponent(means[i], cov), Cell(lower, upper))
        assert lbs[i] <= math.log(p + se) + 1e-12


def test_log_box_lower_bound_finite_where_engine_floors():
    """Fifteen sd out the panel engine reports exactly zero but the latent
    cell still has representable log mass; the bound stays finite and under
    the exact factorized value."""
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    cell = Cell([12.0, 0.0], [13.0, 1.0])
    p_engine, _ = box_probability(comp, cell)
    assert p_engine == 0.0
    lb = float(_log_box_lower_batch(comp.mean[None], comp.cov, cell.lower, cell.upper)[0])
    exact = float(_log_interval_prob_std(12.0, 13.0)) + math.log(ndtr(1.0) - 0.5)
    assert np.isfinite(lb)
    assert lb <= exact


def test_log_box_lower_bound_single_coordinate_is_exact():
    lower = np.array([-INF, 4.0])
    upper = np.array([INF, 5.0])
    means = np.array([[0.3, -1.0]])
    cov = np.diag([1.0, 0.25])
    lb = float(_log_box_lower_batch(means, cov, lower, upper)[0])
    exact = float(_log_interval_prob_std((4.0 + 1.0) / 0.5, (5.0 + 1.0) / 0.5))
    assert lb == pytest.approx(exact, rel=1e-14)


def test_log_box_lower_bound_degenerates_to_neg_inf():
    with np.errstate(over="ignore"):
        lb = _log_box_lower_batch(
            np.array([[1e160, 0.0]]), np.eye(2), np.zeros(2), np.ones(2)
        )
    assert lb[0] == -INF


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_sample_reproducible_and_calibrated():
    comp = GaussianComponent([1.0, -2.0], np.diag([4.0, 1.0]))
    a = sample(comp, np.random.default_rng(7), size=5)
    b = sample(comp, np.random.default_rng(7), size=5)
    np.testing.assert_array_equal(a, b)
    draws = sample(comp, np.random.default_rng(8), size=100_000)
    np.testing.assert_allclose(draws.mean(axis=0), comp.mean, atol=0.02)
    assert 3.85 < draws[:, 0].var() < 4.15


def test_truncated_normal_draw_tails_and_interval():
    rng = np.random.default_rng(0)
    # far tail: inverse-CDF would saturate, the draw must stay exact and inside
    xs = [truncated_normal_draw(rng, 0.0, 1.0, 9.0, INF) for _ in range(200)]
    assert all(x >= 9.0 for x in xs)
    assert np.mean(xs) == pytest.approx(9.0 + 1 / 9.1, abs=0.05)  # ~1/lambda above 9
    ys = [truncated_normal_draw(rng, 0.0, 1.0, -12.0, -11.5) for _ in range(200)]
    assert all(-12.0 <= y < -11.5 for y in ys)
    with pytest.raises(ValueError):
        truncated_normal_draw(rng, 0.0, 1.0, 1.0, 1.0)


def test_sample_truncated_half_line_mean():
    comp = GaussianComponent([0.0], [[1.0]])
    cell = Cell([0.0], [INF])
    rng = np.random.default_rng(12)
    draws = np.array([sample_truncated(comp, cell, rng=rng)[0] for _ in range(20_000)])
    assert draws.min() >= 0.0
    assert draws.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.02)


def test_sample_truncated_noop_matches_normal():
    comp = GaussianComponent([0.0], [[1.0]])
    cell = Cell([-INF], [INF])
    rng = np.random.default_rng(3)
    draws = np.array([sample_truncated(comp, cell, rng=rng)[0] for _ in range(10_000)])
    assert kstest(draws, "norm").statistic < 0.02


def test_sample_truncated_bivariate_orthant_means():
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    cell = Cell([0.0, 0.0], [INF, INF])
    rng = np.random.default_rng(21)
    draws = np.array([sample_truncated(comp, cell, rng=rng) for _ in range(8_000)])
    assert np.all(draws >= 0.0)
    np.testing.assert_allclose(
        draws.mean(axis=0), math.sqrt(2 / math.pi), atol=0.03
    )


def test_sample_truncated_always_in_cell():
    rng = np.random.default_rng(14)
    for _ in range(100):
        p = int(rng.integers(1, 4))
        comp = GaussianComponent(rng.normal(size=p), random_spd(rng, p))
        lo = rng.normal(size=p) - 0.2
        cell = Cell(lo, lo + rng.uniform(0.3, 2.0, size=p))
        x = sample_truncated(comp, cell, rng=rng)
        assert cell.contains(x)


def test_sample_truncated_rejects_bad_init():
    comp = GaussianComponent(np.zeros(2), np.eye(2))
    cell = Cell([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        sample_truncated(comp, cell, init=[2.0, 0.5])
