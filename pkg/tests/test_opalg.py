import itertools
from fractions import Fraction
from pathlib import Path

import pytest
import sympy as sp
from hypothesis import given, strategies as st

from sgld_bea.opalg import (
    DiffOperator,
    MinibatchSpec,
    UnsupportedOrderError,
    adjoint,
    apply,
    compose,
    exp_series,
    format_operator,
    generator,
    lj_from_aj,
    minibatch_gradient_moment,
    one_step_expansion,
    parse_operator,
)
from sgld_bea.polycore import Polynomial, gaussian_moment, parse_polynomial

from conftest import operators, polynomials, positive_fractions, small_fractions

GOLDEN = Path(__file__).parent / "golden" / "ou_beta20.txt"


def golden():
    out = {}
    for line in GOLDEN.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        name, text = (s.strip() for s in line.split("=", 1))
        out[name] = text
    return out


def sym_apply(op: DiffOperator, p: Polynomial):
    t = sp.symbols("x1")
    expr = sp.Integer(0)
    sym_p = sp.sympify(str(p).replace("^", "**")) if not p.is_zero() else sp.Integer(0)
    for (a,), phi in op.items():
        expr += sp.sympify(str(phi).replace("^", "**")) * sp.diff(sym_p, t, a)
    return sp.expand(expr)


# -- basic algebra ----------------------------------------------------------

@given(operators(1), polynomials(1, max_degree=5))
def test_apply_matches_sympy(op, p):
    got = apply(op, p)
    want = sym_apply(op, p)
    assert sp.expand(sp.sympify(str(got).replace("^", "**")) - want) == 0


@given(operators(2), operators(2), polynomials(2))
def test_compose_is_composition(a, b, p):
    assert apply(compose(a, b), p) == apply(a, apply(b, p))


@given(operators(1), operators(1), operators(1))
def test_compose_associative(a, b, c):
    assert (a @ b) @ c == a @ (b @ c)


@given(operators(2), operators(2), polynomials(2))
def test_linearity(a, b, p):
    assert apply(a + b, p) == apply(a, p) + apply(b, p)
    assert apply(a * Fraction(3, 2), p) == apply(a, p) * Fraction(3, 2)


def test_generator_form(x):
    L = generator(x * x / 2, 20)
    assert L == DiffOperator(1, {(1,): -x, (2,): Fraction(1, 20)})


@given(operators(2, max_order=3), polynomials(2, max_degree=3), polynomials(2, max_degree=3),
       positive_fractions, positive_fractions, st.tuples(small_fractions, small_fractions))
def test_adjoint_duality(op, phi, psi, beta, kappa, center):
    # rho(psi * A phi) = rho(phi * A* psi) with rho ~ exp(-beta F)
    xs = [Polynomial.var(i, 2) for i in range(2)]
    F = sum(((v - c) ** 2 for v, c in zip(xs, center)), Polynomial.zero(2)) * (kappa / 2)
    prec = beta * kappa
    lhs = gaussian_moment(psi * apply(op, phi), prec, center)
    rhs = gaussian_moment(phi * apply(adjoint(op, F, beta), psi), prec, center)
    assert lhs == rhs


@given(operators(1, max_order=3), positive_fractions)
def test_adjoint_involution(op, beta):
    x = Polynomial.var(0, 1)
    F = x * x / 2
    assert adjoint(adjoint(op, F, beta), F, beta) == op


def test_generator_self_adjoint_and_d2_adjoint(x):
    F = x * x / 2
    L = generator(F, 20)
    assert adjoint(L, F, 20) == L
    d2 = DiffOperator.partial((2,))
    want = DiffOperator(1, {(2,): Polynomial.constant(1, 1), (1,): -40 * x, (0,): 400 * x * x - 20})
    assert adjoint(d2, F, 20) == want


@given(operators(2))
def test_operator_text_roundtrip(op):
    assert parse_operator(format_operator(op), 2) == op


# -- minibatch moments --------------------------------------------------------

def brute_moment(batch: MinibatchSpec, indices):
    n, nb = batch.n, batch.batch_size
    total = Polynomial.zero(batch.dim)
    for draw in itertools.product(range(n), repeat=nb):
        g = [sum((batch.gradients[i][c] for i in draw), Polynomial.zero(batch.dim)) * Fraction(1, nb)
             for c in range(batch.dim)]
        prod = Polynomial.constant(1, batch.dim)
        for c in indices:
            prod = prod * g[c]
        total = total + prod
    return total * Fraction(1, n ** nb)


@given(st.lists(st.tuples(small_fractions, small_fractions), min_size=2, max_size=3),
       st.integers(1, 3), st.lists(st.integers(0, 1), min_size=1, max_size=3))
def test_minibatch_moment_matches_enumeration(zs, nb, indices):
    xs = [Polynomial.var(i, 2) for i in range(2)]
    grads = [tuple(v - z for v, z in zip(xs, zc)) for zc in zs]
    batch = MinibatchSpec(grads, min(nb, len(zs)))
    assert minibatch_gradient_moment(batch, indices) == brute_moment(batch, indices)


def test_minibatch_order_cap(x):
    batch = MinibatchSpec([(x - 1,), (x + 1,)], 1)
    with pytest.raises(UnsupportedOrderError):
        minibatch_gradient_moment(batch, [0, 0, 0, 0])
    full = MinibatchSpec.full(x * x / 2)
    assert minibatch_gradient_moment(full, [0] * 5) == x ** 5


# -- one-step expansion and the L_j recursion -----------------------------------

def sympy_one_step(grad_text, beta, phi_text, order):
    """Series in eta of E phi(x - eta g(x) + sqrt(2 eta / beta) xi), xi ~ N(0,1)."""
    t, s, xi = sp.symbols("x1 s xi")
    g = sp.sympify(grad_text.replace("^", "**"))
    phi = sp.Lambda(t, sp.sympify(phi_text.replace("^", "**")))
    expr = sp.expand(phi(t - s ** 2 * g + s * sp.sqrt(sp.Rational(2) / beta) * xi))
    poly = sp.Poly(expr, xi)
    mean = sum(c * sp.factorial2(m - 1) for (m,), c in poly.terms() if m % 2 == 0)
    series = sp.expand(mean)
    return [sp.expand(series.coeff(s, 2 * j)) for j in range(order + 1)]


@pytest.mark.parametrize("grad,beta,phi", [
    ("x1", 20, "x1^4"),
    ("x1 - 1/2", 3, "x1^3 + x1^6"),
    ("x1^3", 2, "x1^5 - x1"),
])
def test_one_step_matches_sympy(grad, beta, phi):
    x = Polynomial.var(0, 1)
    g = parse_polynomial(grad, 1)
    A = one_step_expansion(MinibatchSpec([(g,)], 1), beta, 4)
    want = sympy_one_step(grad, beta, phi, 4)
    p = parse_polynomial(phi, 1)
    for Aj, w in zip(A, want):
        got = sp.sympify(str(apply(Aj, p)).replace("^", "**"))
        assert sp.expand(got - w) == 0
    assert x.dim == 1


def test_ou_goldens(x):
    g = golden()
    F = x * x / 2
    A = one_step_expansion(MinibatchSpec.full(F), 20, 3)
    assert A[2] == parse_operator(g["A_2"], 1)
    L1, L2 = lj_from_aj(A, 2, generator(F, 20))
    assert L1 == parse_operator(g["L_1"], 1)
    assert L2 == parse_operator(g["L_2"], 1)


@given(st.lists(small_fractions, min_size=1, max_size=3), st.integers(1, 2), positive_fractions)
def test_lj_reexpansion(zs, nb, beta):
    x = Polynomial.var(0, 1)
    batch = MinibatchSpec([(x - z,) for z in zs], min(nb, len(zs)))
    A = one_step_expansion(batch, beta, 3)
    Ls = lj_from_aj(A, 2)
    assert exp_series([A[1]] + Ls, 3) == A


def test_lj_validation(x):
    A = one_step_expansion(MinibatchSpec.full(x * x / 2), 20, 2)
    with pytest.raises(ValueError):
        lj_from_aj(A, 2)
    with pytest.raises(ValueError):
        lj_from_aj([A[1]] + A[1:], 1)
    with pytest.raises(ValueError):
        lj_from_aj(A, 1, generator(x * x, 20))
