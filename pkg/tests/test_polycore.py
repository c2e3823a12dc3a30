from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from sgld_bea.polycore import (
    HermiteSeries,
    Polynomial,
    bernoulli,
    format_polynomial,
    gaussian_moment,
    hermite_basis,
    hermite_to_poly,
    parse_polynomial,
    poly_eval,
    poly_to_hermite,
)

from conftest import polynomials, positive_fractions, small_fractions


def to_sympy(p: Polynomial):
    xs = sp.symbols(f"x1:{p.dim + 1}")
    return sum((sp.Rational(c.numerator, c.denominator) * sp.Mul(*[v ** e for v, e in zip(xs, a)])
                for a, c in p.items()), sp.Integer(0)), xs


def from_sympy(expr, dim):
    xs = sp.symbols(f"x1:{dim + 1}")
    poly = sp.Poly(sp.expand(expr), *xs)
    return Polynomial(dim, {a: Fraction(int(c.p), int(c.q)) for a, c in poly.terms()})


# -- arithmetic -------------------------------------------------------------

@given(polynomials(2), polynomials(2), polynomials(2))
def test_ring_axioms(p, q, r):
    assert (p + q) * r == p * r + q * r
    assert (p * q) * r == p * (q * r)
    assert p - p == Polynomial.zero(2)
    assert p * q == q * p


@given(polynomials(2), polynomials(2))
def test_product_matches_sympy(p, q):
    sp_p, _ = to_sympy(p)
    sp_q, _ = to_sympy(q)
    assert p * q == from_sympy(sp_p * sp_q, 2)


@given(polynomials(2), polynomials(2))
def test_leibniz(p, q):
    assert (p * q).diff(0) == p.diff(0) * q + p * q.diff(0)


@given(polynomials(2), st.tuples(small_fractions, small_fractions), st.tuples(small_fractions, small_fractions))
def test_shift_composes(p, a, b):
    assert p.shift(a).shift(b) == p.shift(tuple(u + v for u, v in zip(a, b)))


def test_immutable():
    p = Polynomial.var(0, 1)
    with pytest.raises(AttributeError):
        p.dim = 2


def test_dimension_limits():
    with pytest.raises(ValueError):
        Polynomial(5)
    with pytest.raises(ValueError):
        Polynomial.var(0, 1) + Polynomial.var(0, 2)


@given(polynomials(2))
def test_eval_matches_exact(p):
    pts = np.array([[0.5, -1.25], [2.0, 0.0], [-0.75, 1.5]])
    exact = [float(sum(c * Fraction(x) ** a[0] * Fraction(y) ** a[1] for a, c in p.items()))
             for x, y in pts]
    np.testing.assert_allclose(poly_eval(p, pts), exact, rtol=1e-12, atol=1e-12)


def test_eval_shapes():
    x = Polynomial.var(0, 1)
    p = x * x + 1
    assert p(2.0) == 5.0
    np.testing.assert_array_equal(p(np.array([0.0, 1.0, 2.0])), [1.0, 2.0, 5.0])


# -- text format ------------------------------------------------------------

@given(polynomials(3))
def test_format_roundtrip(p):
    assert parse_polynomial(format_polynomial(p), 3) == p


def test_format_examples():
    x = Polynomial.var(0, 1)
    assert format_polynomial(Polynomial.zero(1)) == "0"
    assert format_polynomial(x ** 2 * 5 - Fraction(1, 4)) == "-1/4 + 5 * x1^2"
    assert parse_polynomial("0.1 * x1", 1).coeff((1,)) == Fraction(1, 10)
    assert parse_polynomial("(x1 + 1)^2", 1) == x * x + 2 * x + 1


def test_parse_rejects_bad_variable():
    with pytest.raises(ValueError):
        parse_polynomial("x3", 2)


# -- Gaussian moments and Hermite -------------------------------------------

@pytest.mark.parametrize("beta,center", [(Fraction(1), 0), (Fraction(20), 0), (Fraction(3, 2), Fraction(1, 3))])
def test_gaussian_moment_sympy(beta, center):
    t = sp.symbols("t", real=True)
    b, c = sp.Rational(beta.numerator, beta.denominator), sp.Rational(center)
    dens = sp.sqrt(b / (2 * sp.pi)) * sp.exp(-b * (t - c) ** 2 / 2)
    x = Polynomial.var(0, 1)
    for p in (x ** 2, x ** 4 - 3 * x, (x - 1) ** 3 + x ** 6 * Fraction(1, 7)):
        sym, (xs,) = to_sympy(p)
        oracle = sp.integrate(sym.subs(xs, t) * dens, (t, -sp.oo, sp.oo))
        assert gaussian_moment(p, beta, (center,)) == Fraction(int(sp.numer(oracle)), int(sp.denom(oracle)))


@given(polynomials(1, max_degree=6), positive_fractions, small_fractions)
def test_gaussian_integration_by_parts(p, beta, c):
    # E[p'] = beta E[(x - c) p] under N(c, 1/beta)
    x = Polynomial.var(0, 1)
    assert gaussian_moment(p.diff(0), beta, (c,)) == beta * gaussian_moment((x - c) * p, beta, (c,))


@pytest.mark.parametrize("k", range(7))
def test_hermite_basis_sympy(k):
    t = sp.symbols("x1")
    x = Polynomial.var(0, 1)
    assert hermite_basis((k,), 1) == from_sympy(sp.hermite_prob(k, t), 1)
    # scaled argument with a rational square root
    assert hermite_basis((k,), 4, (Fraction(1, 2),)) == from_sympy(sp.hermite_prob(k, 2 * (t - sp.Rational(1, 2))), 1)
    assert x.dim == 1


def test_hermite_examples():
    x = Polynomial.var(0, 1)
    h = poly_to_hermite(x ** 2, 1)
    assert h.coeffs == {(0,): 1, (2,): 1}
    h = poly_to_hermite(x ** 4, 1)
    assert h.coeffs == {(0,): 3, (2,): 6, (4,): 1}
    assert poly_to_hermite(x ** 4, 20).mean() == Fraction(3, 400)


@given(polynomials(2, max_degree=5), positive_fractions, st.tuples(small_fractions, small_fractions))
def test_hermite_roundtrip(p, beta, c):
    h = poly_to_hermite(p, beta, c)
    assert hermite_to_poly(h) == p
    assert h.mean() == gaussian_moment(p, beta, c)


def test_hermite_irrational_scale_falls_back_to_float():
    h = HermiteSeries(1, 2, None, {(1,): 1})
    assert isinstance(h.coeffs[(1,)], float)
    assert h.coeffs[(1,)] == pytest.approx(2 ** -0.5)


# -- Bernoulli --------------------------------------------------------------

def test_bernoulli():
    assert bernoulli(0) == 1
    assert bernoulli(1) == Fraction(-1, 2)
    assert bernoulli(12) == Fraction(-691, 2730)
    for n in range(2, 25):
        s = sp.bernoulli(n)
        assert bernoulli(n) == Fraction(int(s.p), int(s.q))
