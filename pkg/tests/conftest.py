from fractions import Fraction

import pytest
from hypothesis import settings, strategies as st

from sgld_bea.opalg import DiffOperator
from sgld_bea.polycore import Polynomial

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# filled in by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")


small_fractions = st.builds(Fraction, st.integers(-6, 6), st.integers(1, 4))
positive_fractions = st.builds(Fraction, st.integers(1, 12), st.integers(1, 4))


@st.composite
def polynomials(draw, dim=1, max_degree=4, max_terms=5):
    n = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(n):
        alpha = tuple(draw(st.integers(0, max_degree)) for _ in range(dim))
        if sum(alpha) > max_degree:
            continue
        terms[alpha] = draw(small_fractions)
    return Polynomial(dim, terms)


@st.composite
def operators(draw, dim=1, max_order=3, max_degree=2, max_terms=3):
    n = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(n):
        alpha = tuple(draw(st.integers(0, max_order)) for _ in range(dim))
        if sum(alpha) > max_order:
            continue
        terms[alpha] = draw(polynomials(dim, max_degree, 3))
    return DiffOperator(dim, terms)


@pytest.fixture
def x():
    return Polynomial.var(0, 1)
