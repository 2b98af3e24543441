import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff
from triwell.polynomial import SparsePolynomial


def _random_poly(rng, nvars=4, nterms=6, max_exp=3):
    p = SparsePolynomial(nvars)
    for _ in range(nterms):
        expo = tuple(int(e) for e in rng.integers(0, max_exp + 1, nvars))
        p = p + SparsePolynomial(nvars, {expo: rng.normal()})
    return p


def test_constant_and_variable():
    c = SparsePolynomial.constant(2.5, 3)
    x1 = SparsePolynomial.variable(1, 3)
    assert c.evaluate(np.zeros(3)) == 2.5
    assert x1.evaluate(np.array([0.0, 7.0, 0.0])) == 7.0


def test_zero_coefficients_dropped():
    x = SparsePolynomial.variable(0, 2)
    z = x - x
    assert len(z) == 0
    assert z.evaluate(np.array([3.0, 4.0])) == 0.0


def test_arithmetic_matches_pointwise(rng):
    p = _random_poly(rng)
    q = _random_poly(rng)
    pts = rng.normal(size=(20, 4))
    assert np.allclose((p + q).evaluate(pts), p.evaluate(pts) + q.evaluate(pts))
    assert np.allclose((p * q).evaluate(pts), p.evaluate(pts) * q.evaluate(pts),
                       rtol=1e-12, atol=1e-12)
    assert np.allclose((p * 3.5).evaluate(pts), 3.5 * p.evaluate(pts))
    assert np.allclose((p - q).evaluate(pts), p.evaluate(pts) - q.evaluate(pts))


def test_power():
    x = SparsePolynomial.variable(0, 2)
    p = (x + 1.0) ** 4
    xs = np.array([[0.3, 0.0], [1.7, 0.0]])
    assert np.allclose(p.evaluate(xs), (xs[:, 0] + 1.0) ** 4)
    assert p.total_degree() == 4


def test_diff_against_finite_differences(rng):
    p = _random_poly(rng, nvars=3)
    x0 = rng.normal(size=3)
    grad = np.array([p.diff(v).evaluate(x0) for v in range(3)])
    fd = central_diff(p.evaluate, x0)
    assert np.abs(grad - fd).max() <= 1e-6 * max(1.0, np.abs(grad).max())


def test_directional_derivative(rng):
    p = _random_poly(rng, nvars=3)
    d = rng.normal(size=3)
    dp = p.directional_derivative(d)
    x0 = rng.normal(size=3)
    expect = sum(d[v] * p.diff(v).evaluate(x0) for v in range(3))
    assert abs(dp.evaluate(x0) - expect) <= 1e-12 * max(1.0, abs(expect))


def test_degree_in_subsets():
    x0 = SparsePolynomial.variable(0, 4)
    x3 = SparsePolynomial.variable(3, 4)
    p = x0 * x0 * x3 + x3 * x3
    assert p.degree_in([0]) == 2
    assert p.degree_in([3]) == 2
    assert p.degree_in([0, 3]) == 3
    assert p.degree_in([1, 2]) == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_product_rule_hypothesis(point):
    rng = np.random.default_rng(7)
    p = _random_poly(rng, nvars=3, nterms=4, max_exp=2)
    q = _random_poly(rng, nvars=3, nterms=4, max_exp=2)
    x = np.asarray(point)
    lhs = (p * q).diff(0).evaluate(x)
    rhs = p.diff(0).evaluate(x) * q.evaluate(x) + p.evaluate(x) * q.diff(0).evaluate(x)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs), abs(rhs))
