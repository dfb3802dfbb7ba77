import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbpformer import cbp_core as cbp
from cbpformer.errors import AlignmentError, DegreeError, DomainError
from reference import bernstein_direct, composite_eval, trapezoid


def random_curve(rng, K=3, N=5, dim=2, t0=0.0, span=2.0):
    gaps = rng.uniform(0.2, 1.0, K)
    knots = t0 + span * np.concatenate([[0.0], np.cumsum(gaps)]) / gaps.sum()
    return cbp.CompositeBernstein(knots, rng.normal(size=(K, N + 1, dim)))


curve_params = st.tuples(
    st.integers(1, 4), st.integers(0, 9), st.integers(1, 3), st.integers(0, 2**31 - 1)
)


# -- basis ------------------------------------------------------------------


def test_basis_examples():
    assert cbp.basis_eval(0, 1, 0, [0.0, 1.0], 0.0) == 1.0
    assert cbp.basis_eval(3, 3, 0, [0.0, 1.0], 1.0) == 1.0
    assert cbp.basis_eval(1, 2, 0, [0.0, 1.0], 0.5) == pytest.approx(0.5, abs=1e-15)


def test_basis_errors():
    with pytest.raises(DomainError):
        cbp.basis_eval(0, 2, 0, [0.0, 1.0, 2.0], 1.5)
    with pytest.raises(IndexError):
        cbp.basis_eval(3, 2, 0, [0.0, 1.0], 0.5)
    with pytest.raises(IndexError):
        cbp.basis_eval(0, 2, 2, [0.0, 1.0, 2.0], 0.5)


@given(st.integers(0, 20), st.floats(0.0, 1.0))
def test_basis_matches_binomial_formula(N, s):
    row = cbp.basis_matrix(N, [s])[0]
    ref = [bernstein_direct(j, N, s) for j in range(N + 1)]
    np.testing.assert_allclose(row, ref, rtol=1e-12, atol=1e-15)


@given(st.integers(0, 30), st.floats(0.0, 1.0))
def test_partition_of_unity(N, s):
    assert abs(cbp.basis_matrix(N, [s]).sum() - 1.0) <= 1e-12


# -- evaluation -------------------------------------------------------------


def test_evaluate_examples():
    c = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0, 0.0]])
    assert cbp.evaluate(c, 0.5)[0] == pytest.approx(0.5)
    const = cbp.CompositeBernstein([0.0, 1.0, 3.0], np.full((2, 4, 2), 1.75))
    np.testing.assert_allclose(cbp.evaluate(const, np.linspace(0, 3, 17)), 1.75, atol=1e-14)


def test_evaluate_outside_domain():
    c = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0]])
    with pytest.raises(DomainError):
        cbp.evaluate(c, 1.0 + 1e-9)
    with pytest.raises(DomainError):
        cbp.evaluate(c, -0.1)


@settings(max_examples=60)
@given(curve_params)
def test_evaluate_matches_de_casteljau(params):
    K, N, dim, seed = params
    rng = np.random.default_rng(seed)
    c = random_curve(rng, K, N, dim)
    ts = np.concatenate([c.knots, rng.uniform(c.knots[0], c.knots[-1], 20)])
    got = cbp.evaluate(c, ts)
    ref = np.array([composite_eval(c.knots, c.coeffs, t) for t in ts])
    np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-11)


@settings(max_examples=60)
@given(curve_params)
def test_endpoint_property(params):
    K, N, dim, seed = params
    c = random_curve(np.random.default_rng(seed), K, N, dim)
    np.testing.assert_allclose(cbp.evaluate(c, c.knots[0]), c.flat[0], atol=1e-13)
    np.testing.assert_allclose(cbp.evaluate(c, c.knots[-1]), c.flat[-1], atol=1e-13)


def test_interior_knot_belongs_to_right_segment():
    c = cbp.CompositeBernstein([0.0, 1.0, 2.0], [[0.0, 1.0], [5.0, 6.0]])
    assert cbp.evaluate(c, 1.0)[0] == 5.0


@settings(max_examples=60)
@given(curve_params)
def test_convex_hull_containment(params):
    K, N, dim, seed = params
    rng = np.random.default_rng(seed)
    c = random_curve(rng, K, N, dim)
    lo, hi = cbp.coeff_bounds(c)
    pts = cbp.evaluate(c, np.linspace(c.knots[0], c.knots[-1], 100))
    assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)


# -- calculus ---------------------------------------------------------------


def test_derivative_examples():
    const = cbp.CompositeBernstein([0.0, 2.0], np.full((1, 4), 3.0))
    np.testing.assert_array_equal(cbp.derivative(const).coeffs, 0.0)
    ramp = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0]])
    d = cbp.derivative(ramp)
    assert d.degree == 0 and d.coeffs[0, 0, 0] == 1.0
    two = cbp.CompositeBernstein([0.0, 1.0, 2.0], [[0.0, 0.5, 1.0], [1.0, 1.5, 2.0]])
    np.testing.assert_allclose(cbp.derivative(two).coeffs, 1.0)
    with pytest.raises(DegreeError):
        cbp.derivative(d)


@settings(max_examples=40)
@given(curve_params)
def test_derivative_vs_central_difference(params):
    K, N, dim, seed = params
    if N == 0:
        return
    rng = np.random.default_rng(seed)
    c = random_curve(rng, K, N, dim)
    d = cbp.derivative(c)
    h = 1e-6
    for k in range(c.K):
        a, b = c.knots[k], c.knots[k + 1]
        ts = np.linspace(a + 2 * h, b - 2 * h, 7)
        fd = (cbp.evaluate(c, ts + h) - cbp.evaluate(c, ts - h)) / (2 * h)
        got = cbp.evaluate(d, ts)
        scale = max(1.0, float(np.max(np.abs(got))))
        assert np.max(np.abs(fd - got)) / scale <= 1e-5


def test_differentiation_matrix_matches_derivative():
    rng = np.random.default_rng(4)
    c = random_curve(rng, 3, 6, 2)
    D = cbp.differentiation_matrix(6, c.knots)
    elevated = cbp.elevate(cbp.derivative(c), 6)
    np.testing.assert_allclose(D.T @ c.flat, elevated.flat, atol=1e-10)


def test_integral_examples():
    const = cbp.CompositeBernstein([0.0, 1.0, 2.5], np.full((2, 3), 2.0))
    assert cbp.integral(const)[0] == pytest.approx(5.0)
    ramp = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0]])
    assert cbp.integral(ramp)[0] == pytest.approx(0.5)


@settings(max_examples=40)
@given(curve_params)
def test_integral_vs_trapezoid_and_elevation(params):
    K, N, dim, seed = params
    rng = np.random.default_rng(seed)
    c = random_curve(rng, K, N, 1)
    exact = cbp.integral(c)[0]

    def segment(k):
        a, b = c.knots[k], c.knots[k + 1]
        cf = c.coeffs[k, :, 0]
        return lambda t: sum(
            cf[j] * bernstein_direct(j, N, (t - a) / (b - a)) for j in range(N + 1)
        )

    ref = sum(trapezoid(segment(k), c.knots[k], c.knots[k + 1], 20_001) for k in range(c.K))
    assert abs(exact - ref) <= 1e-7 * max(1.0, abs(ref))
    assert cbp.integral(cbp.elevate(c, N + 3))[0] == pytest.approx(exact, abs=1e-12)


# -- elevation and products ------------------------------------------------


def test_elevation_example():
    c = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0]])
    np.testing.assert_allclose(cbp.elevate(c, 2).coeffs[0, :, 0], [0.0, 0.5, 1.0])
    const = cbp.CompositeBernstein([0.0, 1.0], np.full((1, 3), -2.0))
    np.testing.assert_allclose(cbp.elevate(const, 9).coeffs, -2.0)
    with pytest.raises(DegreeError):
        cbp.elevation_matrix(4, 4)


def test_elevation_matrix_entry_formula():
    N, Ne = 4, 9
    E = cbp.elevation_matrix(N, Ne)
    for i in range(N + 1):
        for j in range(Ne - N + 1):
            want = math.comb(Ne - N, j) * math.comb(N, i) / math.comb(Ne, i + j)
            assert E[i, i + j] == pytest.approx(want, rel=1e-14)
    np.testing.assert_allclose(E.sum(axis=0), 1.0, atol=1e-14)


@settings(max_examples=40)
@given(curve_params, st.integers(1, 12))
def test_elevation_preserves_curve_and_tightens(params, extra):
    K, N, dim, seed = params
    c = random_curve(np.random.default_rng(seed), K, N, dim)
    e = cbp.elevate(c, N + extra)
    t = np.linspace(c.knots[0], c.knots[-1], 100)
    assert np.max(np.abs(cbp.evaluate(e, t) - cbp.evaluate(c, t))) <= 1e-10
    lo0, hi0 = cbp.coeff_bounds(c)
    lo1, hi1 = cbp.coeff_bounds(e)
    assert np.all(lo1 >= lo0 - 1e-12) and np.all(hi1 <= hi0 + 1e-12)


def test_product_examples():
    a = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0]])
    np.testing.assert_allclose(cbp.product(a, a).coeffs[0, :, 0], [0.0, 0.0, 1.0])
    two = cbp.CompositeBernstein([0.0, 1.0], [[2.0]])
    b = cbp.CompositeBernstein([0.0, 1.0], [[0.3, -1.0, 4.0]])
    np.testing.assert_allclose(cbp.product(two, b).coeffs[0, :, 0], [0.6, -2.0, 8.0])
    with pytest.raises(AlignmentError):
        cbp.product(a, cbp.CompositeBernstein([0.0, 2.0], [[0.0, 1.0]]))


@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(0, 8), st.integers(0, 8), st.integers(0, 2**31 - 1))
def test_product_pointwise(K, Na, Nb, seed):
    rng = np.random.default_rng(seed)
    a = random_curve(rng, K, Na, 1)
    b = a.with_coeffs(rng.normal(size=(K, Nb + 1)))
    p = cbp.product(a, b)
    t = np.linspace(a.knots[0], a.knots[-1], 50)
    diff = cbp.evaluate(p, t) - cbp.evaluate(a, t) * cbp.evaluate(b, t)
    assert np.max(np.abs(diff)) <= 1e-10


def test_coeff_bounds_examples():
    c = cbp.CompositeBernstein([0.0, 1.0], [[0.0, 1.0, 0.0]])
    lo, hi = cbp.coeff_bounds(c)
    assert (lo[0], hi[0]) == (0.0, 1.0)
    true_max = cbp.evaluate(c, np.linspace(0, 1, 1001)).max()
    assert true_max == pytest.approx(0.5) and hi[0] > true_max


# -- structure --------------------------------------------------------------


def test_knot_continuity_residual():
    coeffs = np.array([[0.0, 1.0, 2.0], [2.0, 3.0, 4.0]])
    c = cbp.CompositeBernstein([0.0, 1.0, 2.0], coeffs)
    np.testing.assert_array_equal(cbp.knot_continuity_residual(c)[0], [0.0])
    coeffs[1, 0] += 0.1
    r = cbp.knot_continuity_residual(c.with_coeffs(coeffs))[0]
    assert r[0] == pytest.approx(-0.1)
    shifted = c.with_coeffs(coeffs + 7.0)
    assert cbp.knot_continuity_residual(shifted)[0][0] == pytest.approx(-0.1)


def test_text_round_trip():
    c = random_curve(np.random.default_rng(11), 3, 4, 2)
    back = cbp.from_text(cbp.to_text(c))
    np.testing.assert_array_equal(back.knots, c.knots)
    np.testing.assert_array_equal(back.coeffs, c.coeffs)


def test_rejects_bad_knots():
    with pytest.raises(ValueError):
        cbp.CompositeBernstein([0.0, 0.0], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        cbp.CompositeBernstein([0.0, 1.0, 2.0], [[1.0, 2.0]])
