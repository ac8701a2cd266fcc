"""The rounding map: mixed-scale density evaluation, sampling, enumeration."""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import lognorm

from roundmix import (
    MixedDensity,
    MixedPoint,
    MixedSchema,
    MonotoneMap,
    PartitionSpec,
    SchemaError,
    discrete_marginal,
    discrete_support_enumeration,
    eval_mixed_logdensity,
    export_density_grid,
    pushforward_sample,
    total_mass,
)
from roundmix.density import latent_block_logdensity, pushforward_arrays
from roundmix.mixture import log_density_latent, sample_latent
from tests.conftest import gaussian_mixture, random_spd, std_mixture

PHI_1 = float(ndtr(1.0))  # 0.8413447460685429


def density_at(fd, y1, y2) -> float:
    return math.exp(eval_mixed_logdensity(fd, MixedPoint(y1, y2)))


# ---------------------------------------------------------------------------
# Evaluation oracles
# ---------------------------------------------------------------------------


def test_binary_symmetry(binary_schema):
    fd = MixedDensity(binary_schema, std_mixture(1))
    assert density_at(fd, [], [0]) == pytest.approx(0.5, abs=1e-14)
    assert density_at(fd, [], [1]) == pytest.approx(0.5, abs=1e-14)


def test_pure_continuous_equals_latent():
    schema = MixedSchema(cont_maps=(MonotoneMap(),))
    m = gaussian_mixture([0.4, 0.6], [[0.0], [2.0]], [[[1.0]], [[0.5]]])
    fd = MixedDensity(schema, m)
    for y in (-1.0, 0.3, 2.7):
        assert eval_mixed_logdensity(fd, MixedPoint([y], [])) == pytest.approx(
            log_density_latent(m, [y]), abs=1e-13
        )


def test_count_cell_probability(count_schema):
    fd = MixedDensity(count_schema, std_mixture(1))
    # level 1 occupies [0, 1)
    assert density_at(fd, [], [1]) == pytest.approx(PHI_1 - 0.5, abs=1e-14)
    assert density_at(fd, [], [0]) == pytest.approx(0.5, abs=1e-14)


def test_independent_factorization(cont_binary_schema):
    fd = MixedDensity(cont_binary_schema, std_mixture(2))
    for y1 in (-2.0, 0.0, 1.3):
        phi = math.exp(-0.5 * y1 * y1) / math.sqrt(2 * math.pi)
        assert density_at(fd, [y1], [1]) == pytest.approx(0.5 * phi, rel=1e-12)


def test_correlated_conditional_factor():
    """p1=1, p2=1 with correlation: the box factor is the exact conditional."""
    rho = 0.6
    schema = MixedSchema(
        cont_maps=(MonotoneMap(),), partitions=(PartitionSpec.from_cuts((0.0,)),)
    )
    m = gaussian_mixture([1.0], [[0.2, -0.1]], [np.array([[1.0, rho], [rho, 1.0]])])
    fd = MixedDensity(schema, m)
    y1 = 0.9
    cond_mean = -0.1 + rho * (y1 - 0.2)
    cond_sd = math.sqrt(1 - rho * rho)
    phi = math.exp(-0.5 * (y1 - 0.2) ** 2) / math.sqrt(2 * math.pi)
    expect = phi * (1 - ndtr((0.0 - cond_mean) / cond_sd))
    assert density_at(fd, [y1], [1]) == pytest.approx(expect, rel=1e-12)


def test_lognormal_jacobian():
    """A log map on a standard normal is exactly the standard lognormal."""
    schema = MixedSchema(cont_maps=(MonotoneMap("log"),))
    fd = MixedDensity(schema, std_mixture(1))
    for y in (0.2, 0.7, 1.0, 3.5):
        assert density_at(fd, [y], []) == pytest.approx(
            float(lognorm.pdf(y, s=1.0)), rel=1e-10
        )


def test_lognormal_integrates_to_one():
    from roundmix.quadrature import adaptive_quad_vec

    schema = MixedSchema(cont_maps=(MonotoneMap("log"),))
    fd = MixedDensity(schema, std_mixture(1))

    def f(ys):
        return np.array(
            [math.exp(eval_mixed_logdensity(fd, MixedPoint([y], []))) for y in ys]
        )

    val, _ = adaptive_quad_vec(f, 1e-8, 80.0, abs_tol=1e-8)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_dimension_mismatch_rejected(binary_schema):
    with pytest.raises(SchemaError):
        MixedDensity(binary_schema, std_mixture(2))


def test_invalid_point_rejected(cont_binary_schema):
    fd = MixedDensity(cont_binary_schema, std_mixture(2))
    with pytest.raises(SchemaError):
        eval_mixed_logdensity(fd, MixedPoint([0.0], [7]))


def test_latent_block_matches_pointwise_eval(cont_binary_schema):
    """The batch evaluator agrees with the per-point one on identity maps."""
    rng = np.random.default_rng(31)
    m = gaussian_mixture(
        [0.5, 0.5],
        [rng.normal(size=2), rng.normal(size=2)],
        [random_spd(rng, 2), random_spd(rng, 2)],
    )
    fd = MixedDensity(cont_binary_schema, m)
    us = rng.normal(size=(9, 1))
    logq, aerr = latent_block_logdensity(fd, us, [1])
    assert logq.shape == aerr.shape == (9,)
    for u, lq in zip(us, logq):
        assert lq == pytest.approx(
            eval_mixed_logdensity(fd, MixedPoint(u, [1])), abs=1e-12
        )
    assert np.all(aerr == 0.0)  # one discrete coordinate: interval probs are exact


def _log_mills_interval(a: float, b: float) -> float:
    """log(Phi(-a) - Phi(-b)) via the Mills-ratio expansion, for far tails."""

    def log_survival(z):
        return (
            -0.5 * z * z
            - 0.5 * math.log(2 * math.pi)
            - math.log(z)
            + math.log1p(-1.0 / z**2 + 3.0 / z**4)
        )

    la, lb = log_survival(a), log_survival(b)
    return la + math.log1p(-math.exp(lb - la))


def test_latent_block_finite_in_deep_count_tail():
    """Cell [44, 45) sits 44 sd out, far past CDF underflow; the log
    density must stay finite and match the survival-form expansion."""
    schema = MixedSchema(
        cont_maps=(MonotoneMap(),), partitions=(PartitionSpec.counting(),)
    )
    fd = MixedDensity(schema, std_mixture(2))
    logq, aerr = latent_block_logdensity(fd, np.array([[0.0]]), [45])
    oracle = -0.5 * math.log(2 * math.pi) + _log_mills_interval(44.0, 45.0)
    assert logq[0] == pytest.approx(oracle, abs=1e-3)
    assert aerr[0] == 0.0


def test_latent_block_two_disc_coords_survive_engine_floor():
    """With two discrete coordinates the cell factor runs through the
    bivariate engine, which floors to exact zero near 10 sd; the fallback
    keeps the log density finite and below the true factorized value."""
    schema = MixedSchema(
        cont_maps=(MonotoneMap(),),
        partitions=(PartitionSpec.from_cuts((0.0,)), PartitionSpec.counting()),
    )
    fd = MixedDensity(schema, std_mixture(3))
    logq, _ = latent_block_logdensity(fd, np.array([[0.0]]), [0, 30])
    truth = (
        -0.5 * math.log(2 * math.pi)  # continuous factor at the mode
        + math.log(0.5)  # binary cell
        + _log_mills_interval(29.0, 30.0)
    )
    assert np.isfinite(logq[0])
    assert logq[0] <= truth + 1e-6


# ---------------------------------------------------------------------------
# Pushforward sampling
# ---------------------------------------------------------------------------


def test_pushforward_binary_frequency(binary_schema):
    fd = MixedDensity(binary_schema, std_mixture(1))
    _, y2 = pushforward_arrays(fd, 100_000, np.random.default_rng(0))
    assert float((y2[:, 0] == 1).mean()) == pytest.approx(0.5, abs=0.005)


def test_pushforward_count_frequency(count_schema):
    fd = MixedDensity(count_schema, std_mixture(1))
    _, y2 = pushforward_arrays(fd, 100_000, np.random.default_rng(1))
    assert float((y2[:, 0] == 1).mean()) == pytest.approx(PHI_1 - 0.5, abs=0.005)


def test_pushforward_pure_continuous_is_latent_draw():
    schema = MixedSchema(cont_maps=(MonotoneMap(), MonotoneMap()))
    m = std_mixture(2)
    fd = MixedDensity(schema, m)
    y1, y2 = pushforward_arrays(fd, 50, np.random.default_rng(5))
    np.testing.assert_array_equal(y1, sample_latent(m, 50, np.random.default_rng(5)))
    assert y2.shape == (50, 0)


def test_pushforward_sample_points_are_schema_valid(cont_binary_schema):
    fd = MixedDensity(cont_binary_schema, std_mixture(2))
    points = pushforward_sample(fd, 20, np.random.default_rng(2))
    assert len(points) == 20
    for point in points:
        point.check_against(cont_binary_schema)


def test_pushforward_rejects_empty():
    fd = MixedDensity(MixedSchema(cont_maps=(MonotoneMap(),)), std_mixture(1))
    with pytest.raises(ValueError):
        pushforward_arrays(fd, 0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Discrete support enumeration and marginals
# ---------------------------------------------------------------------------


def test_enumeration_finite_schema():
    schema = MixedSchema(
        partitions=(PartitionSpec.from_cuts((0.0,)), PartitionSpec.from_cuts((0.0,)))
    )
    fd = MixedDensity(schema, std_mixture(2))
    outcomes = discrete_support_enumeration(fd, 1e-6)
    assert sorted(tuple(o) for o in outcomes) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_enumeration_count_bound_and_monotonicity(count_schema):
    fd = MixedDensity(count_schema, std_mixture(1))
    tight = discrete_support_enumeration(fd, 1e-6)
    loose = discrete_support_enumeration(fd, 1e-3)
    m_tight = max(int(o[0]) for o in tight)
    m_loose = max(int(o[0]) for o in loose)
    assert m_tight >= 5  # the omitted normal tail beyond 5 is < 3e-7
    assert m_loose <= m_tight
    with pytest.raises(ValueError):
        discrete_support_enumeration(fd, 0.5)


def test_enumeration_covers_requested_mass(count_schema):
    fd = MixedDensity(count_schema, std_mixture(1))
    outcomes = discrete_support_enumeration(fd, 1e-6)
    covered = sum(discrete_marginal(fd, o)[0] for o in outcomes)
    assert covered >= 1.0 - 1e-6


def test_discrete_marginal_binary(binary_schema):
    fd = MixedDensity(binary_schema, std_mixture(1))
    prob, se = discrete_marginal(fd, [1])
    assert prob == pytest.approx(0.5, abs=1e-12)
    assert se >= 0.0


def test_total_mass_simple_cases(cont_binary_schema):
    fd = MixedDensity(cont_binary_schema, std_mixture(2))
    mass, err = total_mass(fd)
    assert abs(mass - 1.0) < 1e-3
    pure = MixedDensity(MixedSchema(cont_maps=(MonotoneMap(),)), std_mixture(1))
    mass, _ = total_mass(pure)
    assert abs(mass - 1.0) < 1e-3


# ---------------------------------------------------------------------------
# Grid export
# ---------------------------------------------------------------------------


def test_export_density_grid(tmp_path, cont_binary_schema):
    fd = MixedDensity(cont_binary_schema, std_mixture(2))
    grid = np.linspace(-2.0, 2.0, 5)[:, None]
    path = tmp_path / "grid.csv"
    n_rows = export_density_grid(fd, grid, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "d1", "log_density", "density"]
    assert n_rows == len(rows) - 1 == 5 * 2
    for row in rows[1:]:
        assert float(row[3]) == pytest.approx(math.exp(float(row[2])), rel=1e-12)
    # spot value: grid point 0.0, level 1
    target = [r for r in rows[1:] if float(r[0]) == 0.0 and r[1] == "1"]
    assert len(target) == 1
    expect = 0.5 / math.sqrt(2 * math.pi)
    assert float(target[0][3]) == pytest.approx(expect, rel=1e-10)
