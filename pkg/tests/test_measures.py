from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from sgld_bea.measures import (
    GibbsMeasure,
    SolvabilityError,
    UnsupportedPotentialError,
    build_mu_cascade,
    density,
    measure_integrate,
    modified_measure,
    negativity_threshold,
    ou_measure,
    solve_poisson,
)
from sgld_bea.opalg import MinibatchSpec, adjoint, apply, generator, lj_from_aj, one_step_expansion
from sgld_bea.polycore import Polynomial, parse_polynomial

from conftest import polynomials, positive_fractions, small_fractions
from test_opalg import golden


def discrete_ratio_series(beta, order):
    """Taylor coefficients in eta of N(0, 2/(beta(2-eta)))(x) / N(0, 1/beta)(x)."""
    x, eta = sp.symbols("x1 eta")
    v = 2 / (beta * (2 - eta))
    ratio = sp.sqrt(1 / (beta * v)) * sp.exp(-x ** 2 / (2 * v) + beta * x ** 2 / 2)
    ser = sp.series(ratio, eta, 0, order + 1).removeO()
    return [sp.expand(ser.coeff(eta, k)) for k in range(1, order + 1)]


def as_poly(expr):
    return parse_polynomial(str(sp.expand(expr)).replace("**", "^"), 1)


@pytest.mark.parametrize("beta", [20, 3, Fraction(1, 2)])
def test_ou_corrections_match_discrete_law(beta):
    pi = ou_measure(beta, 3, Fraction(1, 10))
    b = sp.Rational(Fraction(beta).numerator, Fraction(beta).denominator)
    for mu, want in zip(pi.corrections, discrete_ratio_series(b, 3)):
        assert mu == as_poly(want)


def test_ou_goldens():
    g = golden()
    pi = ou_measure(20, 2, Fraction(1, 2))
    assert pi.corrections[0] == parse_polynomial(g["mu_1"], 1)
    assert pi.corrections[1] == parse_polynomial(g["mu_2"], 1)


def test_ou_second_moment_series(x):
    # the discrete variance 2/(beta(2-eta)) = (1/beta) sum (eta/2)^k
    beta = 20
    pi = ou_measure(beta, 3, 0)
    for k, mu in enumerate(pi.corrections, start=1):
        assert pi.base.mean(x * x * mu) == Fraction(1, beta * 2 ** k)
    assert measure_integrate(ou_measure(20, 1, Fraction(1, 2)), x * x) == Fraction(1, 16)


def test_ou_multidim():
    pi = ou_measure(3, 1, Fraction(1, 10), dim=2)
    x1, x2 = (Polynomial.var(i, 2) for i in range(2))
    assert pi.corrections[0] == (x1 * x1 + x2 * x2) * Fraction(3, 4) - Fraction(1, 2)


@given(st.lists(st.tuples(small_fractions, small_fractions), min_size=1, max_size=3),
       st.integers(1, 3), positive_fractions)
def test_cascade_consistency(zs, nb, beta):
    xs = [Polynomial.var(i, 2) for i in range(2)]
    grads = [tuple(v - z for v, z in zip(xs, zc)) for zc in zs]
    F = sum((sum(((v - z) ** 2 for v, z in zip(xs, zc)), Polynomial.zero(2)) for zc in zs),
            Polynomial.zero(2)) * Fraction(1, 2 * len(zs))
    batch = MinibatchSpec(grads, min(nb, len(zs)))
    L = generator(F, beta)
    Ls = lj_from_aj(one_step_expansion(batch, beta, 3), 2, L)
    mus = build_mu_cascade(L, Ls, F, beta)
    rho = GibbsMeasure(F, beta)
    stars = [adjoint(op, F, beta) for op in Ls]
    prev = [Polynomial.constant(1, 2)] + mus
    for m, mu in enumerate(mus, start=1):
        G = -sum((apply(stars[l - 1], prev[m - l]) for l in range(1, m + 1)), Polynomial.zero(2))
        assert apply(L, mu) == G
        assert rho.mean(mu) == 0


@given(polynomials(1, max_degree=5), positive_fractions, small_fractions)
def test_poisson_solution(p, beta, c):
    x = Polynomial.var(0, 1)
    F = (x - c) ** 2 / 2
    rho = GibbsMeasure(F, beta)
    G = p - rho.mean(p)
    L = generator(F, beta)
    u = solve_poisson(L, G, beta)
    assert apply(L, u) == G
    assert rho.mean(u) == 0


def test_poisson_rejects_uncentered(x):
    with pytest.raises(SolvabilityError):
        solve_poisson(generator(x * x / 2, 1), x * x, 1)


def test_unsupported_potentials(x):
    y = Polynomial.var(1, 2)
    with pytest.raises(UnsupportedPotentialError):
        GibbsMeasure(x ** 4, 1)
    with pytest.raises(UnsupportedPotentialError):
        GibbsMeasure(Polynomial.var(0, 2) ** 2 + 2 * y * y, 1)
    with pytest.raises(UnsupportedPotentialError):
        GibbsMeasure(-x * x, 1)


@given(st.integers(1, 3), positive_fractions, st.builds(Fraction, st.integers(0, 20), st.just(10)))
def test_total_mass_is_one(order, beta, eta):
    assert measure_integrate(ou_measure(beta, order, eta), 1) == 1


def test_pdf_normalised():
    rho = GibbsMeasure(Polynomial.var(0, 1) ** 2 / 2, 20)
    grid = np.linspace(-3, 3, 4001)
    assert np.trapezoid(rho.pdf(grid), grid) == pytest.approx(1.0, abs=1e-10)


def test_eta_zero_is_gibbs():
    pi = ou_measure(20, 2, 0)
    grid = np.linspace(-1, 1, 11)
    np.testing.assert_array_equal(density(pi, grid), pi.base.pdf(grid))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_negativity_threshold(d):
    pi = ou_measure(20, 1, Fraction(1, 2), dim=d)
    eta_star = negativity_threshold(pi)
    assert eta_star == Fraction(4, d)
    origin = np.zeros(d)
    assert pi.with_eta(eta_star).weight()(origin) == 0
    assert density(pi.with_eta(eta_star * Fraction(99, 100)), origin) > 0
    assert density(pi.with_eta(eta_star * Fraction(101, 100)), origin) < 0
    doubled = ou_measure(20, 1, Fraction(1, 2), dim=d, convention="doubled")
    assert negativity_threshold(doubled) == Fraction(2, d)


def test_float_pipeline_close_to_exact(x):
    exact = modified_measure(MinibatchSpec.full(x * x / 2), x * x / 2, 20, 2, Fraction(1, 2))
    approx = modified_measure(MinibatchSpec.full(x * x / 2), x * x / 2, 20.0, 2, 0.5)
    assert float(measure_integrate(approx, x ** 4)) == pytest.approx(float(measure_integrate(exact, x ** 4)),
                                                                     rel=1e-12)
