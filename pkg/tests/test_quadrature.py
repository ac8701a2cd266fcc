"""Adaptive and nested Kronrod quadrature engines."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roundmix.quadrature import adaptive_quad_vec, nested_quad_vec, panel_rule


def test_polynomial_is_exact():
    val, err = adaptive_quad_vec(lambda x: x**3, 0.0, 1.0)
    assert val == pytest.approx(0.25, abs=1e-14)
    assert err < 1e-12


def test_gaussian_mass():
    f = lambda x: np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    val, err = adaptive_quad_vec(f, -8.0, 8.0, abs_tol=1e-13)
    assert abs(val - 1.0) < 1e-10
    assert abs(val - 1.0) <= max(err, 1e-12)  # the bound is honest


def test_orientation_and_degenerate_interval():
    val, _ = adaptive_quad_vec(lambda x: np.ones_like(x), 1.0, 0.0)
    assert val == pytest.approx(-1.0, abs=1e-14)
    assert adaptive_quad_vec(lambda x: x, 2.0, 2.0) == (0.0, 0.0)


def test_infinite_limits_rejected():
    with pytest.raises(ValueError):
        adaptive_quad_vec(lambda x: x, 0.0, math.inf)


def test_integrand_called_in_batches():
    sizes = []

    def f(x):
        sizes.append(x.size)
        return np.sin(x)

    val, _ = adaptive_quad_vec(f, 0.0, math.pi, abs_tol=1e-12)
    assert val == pytest.approx(2.0, abs=1e-10)
    assert all(s % 15 == 0 for s in sizes)  # whole Kronrod panels at a time


def test_budget_exhaustion_keeps_honest_error():
    # A needle the budget cannot resolve: the reported bound must stay large.
    f = lambda x: 1.0 / (1e-8 + (x - 0.31831) ** 2)
    val, err = adaptive_quad_vec(f, 0.0, 1.0, abs_tol=1e-12, max_intervals=8)
    assert err > 1e-6


@settings(deadline=None, max_examples=40)
@given(
    coeffs=st.lists(
        st.floats(min_value=-5.0, max_value=5.0), min_size=1, max_size=6
    ),
    a=st.floats(min_value=-3.0, max_value=3.0),
    width=st.floats(min_value=0.1, max_value=4.0),
)
def test_random_polynomials_match_antiderivative(coeffs, a, width):
    b = a + width
    poly = np.polynomial.Polynomial(coeffs)
    exact = poly.integ()(b) - poly.integ()(a)
    val, err = adaptive_quad_vec(lambda x: poly(x), a, b)
    assert val == pytest.approx(exact, abs=max(1e-10, err))


def test_nested_rectangle_product():
    val, err = nested_quad_vec(lambda x, y: x * y, 0.0, 1.0, 0.0, 1.0)
    assert val == pytest.approx(0.25, abs=1e-12)
    assert err < 1e-8


def test_nested_gaussian_mass():
    def f2(x, y):
        return np.exp(-0.5 * (x * x + y * y)) / (2 * math.pi)

    val, err = nested_quad_vec(f2, -7.0, 7.0, -7.0, 7.0, abs_tol=1e-10)
    assert abs(val - 1.0) < 1e-8
    assert abs(val - 1.0) <= max(err, 1e-10)


def test_nested_rejects_empty_rectangle():
    with pytest.raises(ValueError):
        nested_quad_vec(lambda x, y: x, 1.0, 0.0, 0.0, 1.0)


def test_panel_rule_weights():
    nodes, w_k, w_g = panel_rule(-2.0, 3.0, 4)
    assert nodes.shape == w_k.shape == w_g.shape == (60,)
    # both rules integrate constants exactly: weights sum to the length
    assert w_k.sum() == pytest.approx(5.0, abs=1e-12)
    assert w_g.sum() == pytest.approx(5.0, abs=1e-12)
    # and a cubic exactly
    exact = (3.0**4 - (-2.0) ** 4) / 4.0
    assert (nodes**3) @ w_k == pytest.approx(exact, abs=1e-10)
    with pytest.raises(ValueError):
        panel_rule(1.0, 1.0, 2)
