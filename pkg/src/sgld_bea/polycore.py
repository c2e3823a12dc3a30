"""Exact multivariate polynomials, Hermite transforms and Gaussian moments.

Coefficients are :class:`fractions.Fraction` whenever the inputs are exact
(ints or Fractions); floats are accepted and propagate as floats. All objects
are immutable after construction.
"""
from __future__ import annotations

import math
import re
from fractions import Fraction
from functools import lru_cache
from numbers import Number
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

MultiIndex = Tuple[int, ...]

MAX_DIM = 4


def as_coef(c):
    """Normalise a scalar: ints/Fractions become Fraction, floats stay floats."""
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, np.integer)):
        return Fraction(int(c))
    if isinstance(c, (float, np.floating)):
        return float(c)
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"unsupported coefficient type {type(c).__name__}")


def is_exact(c) -> bool:
    return isinstance(c, Fraction)


def _add_idx(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(i + j for i, j in zip(a, b))


class Polynomial:
    """Sparse polynomial in ``dim`` variables ``x1..xd``.

    ``terms`` maps exponent tuples to non-zero coefficients.
    """

    __slots__ = ("dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Optional[Mapping[MultiIndex, object]] = None):
        if not 1 <= dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {dim}")
        clean: Dict[MultiIndex, object] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim or min(alpha) < 0:
                raise ValueError(f"bad exponent {alpha} for dimension {dim}")
            c = as_coef(c)
            if c != 0:
                clean[alpha] = clean.get(alpha, 0) + c
                if clean[alpha] == 0:
                    del clean[alpha]
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "_terms", clean)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim)

    @classmethod
    def constant(cls, c, dim: int) -> "Polynomial":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def var(cls, i: int, dim: int) -> "Polynomial":
        """The coordinate ``x_{i+1}`` (0-based ``i``)."""
        alpha = [0] * dim
        alpha[i] = 1
        return cls(dim, {tuple(alpha): 1})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c=1) -> "Polynomial":
        return cls(len(alpha), {tuple(alpha): c})

    @classmethod
    def _raw(cls, dim: int, terms: Dict[MultiIndex, object]) -> "Polynomial":
        # trusted fast path: terms already clean
        obj = cls.__new__(cls)
        object.__setattr__(obj, "dim", dim)
        object.__setattr__(obj, "_terms", terms)
        object.__setattr__(obj, "_hash", None)
        return obj

    # -- inspection ---------------------------------------------------
    @property
    def terms(self) -> Dict[MultiIndex, object]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, alpha: Sequence[int]):
        return self._terms.get(tuple(alpha), Fraction(0))

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(a) for a in self._terms), default=-1)

    def is_exact(self) -> bool:
        return all(is_exact(c) for c in self._terms.values())

    def is_even(self) -> bool:
        """True if p(-x) = p(x)."""
        return all(sum(a) % 2 == 0 for a in self._terms)

    def constant_term(self):
        return self.coeff((0,) * self.dim)

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        if isinstance(other, Number):
            return Polynomial.constant(other, self.dim)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for a, c in other._terms.items():
            v = out.get(a, 0) + c
            if v == 0:
                out.pop(a, None)
            else:
                out[a] = v
        return Polynomial._raw(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.dim, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Number):
            c = as_coef(other)
            if c == 0:
                return Polynomial.zero(self.dim)
            return Polynomial._raw(self.dim, {a: v * c for a, v in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: Dict[MultiIndex, object] = {}
        for a, c in self._terms.items():
            for b, d in other._terms.items():
                k = _add_idx(a, b)
                out[k] = out.get(k, 0) + c * d
        return Polynomial._raw(self.dim, {k: v for k, v in out.items() if v != 0})

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Number):
            return NotImplemented
        c = as_coef(other)
        return self * (1 / c if not is_exact(c) else Fraction(1) / c)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("power must be a non-negative integer")
        result = Polynomial.constant(1, self.dim)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Number):
            other = Polynomial.constant(other, self.dim)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            object.__setattr__(self, "_hash", hash((self.dim, frozenset(self._terms.items()))))
        return self._hash

    # -- calculus and substitutions ------------------------------------
    def diff(self, i: int, k: int = 1) -> "Polynomial":
        """k-th partial derivative in coordinate i (0-based)."""
        out = {}
        for a, c in self._terms.items():
            if a[i] < k:
                continue
            fall = math.perm(a[i], k)
            b = list(a)
            b[i] -= k
            out[tuple(b)] = c * fall
        return Polynomial._raw(self.dim, out)

    def diff_multi(self, alpha: Sequence[int]) -> "Polynomial":
        """Apply d^alpha = d_1^{alpha_1} ... d_d^{alpha_d}."""
        out = {}
        for a, c in self._terms.items():
            if any(ai < bi for ai, bi in zip(a, alpha)):
                continue
            f = 1
            for ai, bi in zip(a, alpha):
                f *= math.perm(ai, bi)
            out[tuple(ai - bi for ai, bi in zip(a, alpha))] = c * f
        return Polynomial._raw(self.dim, out)

    def gradient(self) -> Tuple["Polynomial", ...]:
        return tuple(self.diff(i) for i in range(self.dim))

    def laplacian(self) -> "Polynomial":
        return sum((self.diff(i, 2) for i in range(self.dim)), Polynomial.zero(self.dim))

    def shift(self, a: Sequence) -> "Polynomial":
        """Return q(y) = p(y + a)."""
        a = [as_coef(v) for v in a]
        if all(v == 0 for v in a):
            return self
        xs = [Polynomial.var(i, self.dim) + a[i] for i in range(self.dim)]
        return self.compose_linear(xs)

    def compose_linear(self, xs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute x_i -> xs[i]."""
        out = Polynomial.zero(xs[0].dim)
        cache: Dict[Tuple[int, int], Polynomial] = {}
        for alpha, c in self._terms.items():
            term = Polynomial.constant(c, xs[0].dim)
            for i, e in enumerate(alpha):
                if e:
                    if (i, e) not in cache:
                        cache[(i, e)] = xs[i] ** e
                    term = term * cache[(i, e)]
            out = out + term
        return out

    # -- evaluation ----------------------------------------------------
    def __call__(self, x):
        return poly_eval(self, x)

    def to_float(self) -> "Polynomial":
        return Polynomial._raw(self.dim, {a: float(c) for a, c in self._terms.items()})

    # -- text ----------------------------------------------------------
    def sorted_terms(self):
        return sorted(self._terms.items(), key=lambda t: (sum(t[0]), tuple(-e for e in t[0])))

    def __str__(self):
        return format_polynomial(self)

    def __repr__(self):
        return f"Polynomial({self.dim}, {format_polynomial(self)!r})"


def poly_eval(p: Polynomial, x):
    """Evaluate ``p`` at a point or at a batch of points.

    ``x`` may be a length-d vector (returns a float) or an array of shape
    ``(..., d)`` (returns an array of shape ``(...)``). For d = 1 a plain
    1-D array is read as a batch of scalar points.
    """
    arr = np.asarray(x, dtype=float)
    if p.dim == 1 and arr.ndim <= 1 and not (arr.ndim == 1 and arr.shape[0] == 1):
        arr = arr.reshape(arr.shape + (1,))
    if arr.shape[-1] != p.dim:
        raise ValueError(f"dimension mismatch: polynomial has d={p.dim}, point has {arr.shape[-1]}")
    scalar = arr.ndim == 1
    pts = arr.reshape(-1, p.dim)
    out = np.zeros(pts.shape[0])
    if not p.is_zero():
        maxdeg = [max(a[i] for a in p._terms) for i in range(p.dim)]
        powers = [np.vander(pts[:, i], maxdeg[i] + 1, increasing=True) for i in range(p.dim)]
        for alpha, c in p._terms.items():
            term = np.full(pts.shape[0], float(c))
            for i, e in enumerate(alpha):
                if e:
                    term = term * powers[i][:, e]
            out += term
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape[:-1])


# ---------------------------------------------------------------------------
# Gaussian moments and Hermite basis
# ---------------------------------------------------------------------------

def _double_factorial_odd(m: int) -> int:
    """(m-1)!! for even m, i.e. E[u^m] for u ~ N(0,1)."""
    r = 1
    for k in range(m - 1, 0, -2):
        r *= k
    return r


def _exact(c):
    c = as_coef(c)
    return c


def _center(center, dim):
    if center is None:
        return (Fraction(0),) * dim
    center = tuple(as_coef(c) for c in center)
    if len(center) != dim:
        raise ValueError("center has wrong dimension")
    return center


def gaussian_moment(p: Polynomial, beta, center=None):
    """Integral of ``p`` against N(center, I/beta).

    Exact (a Fraction) when ``p``, ``beta`` and ``center`` are exact.
    """
    beta = _exact(beta)
    if beta <= 0:
        raise ValueError("beta must be positive")
    q = p.shift(_center(center, p.dim))
    inv = (Fraction(1) / beta) if is_exact(beta) else 1.0 / beta
    total = Fraction(0)
    for alpha, c in q.items():
        if any(e % 2 for e in alpha):
            continue
        m = c
        for e in alpha:
            m = m * _double_factorial_odd(e) * inv ** (e // 2)
        total = total + m
    return total


@lru_cache(maxsize=None)
def _monomial_to_hermite_1d(m: int):
    """y^m = sum_j m!/(2^j j! (m-2j)!) * beta^{-j} * H_{m-2j}; returns [(k, int coef, j)]."""
    out = []
    for j in range(m // 2 + 1):
        out.append((m - 2 * j, math.factorial(m) // (2 ** j * math.factorial(j) * math.factorial(m - 2 * j)), j))
    return tuple(out)


@lru_cache(maxsize=None)
def _hermite_to_monomial_1d(k: int):
    """H_k = sum_j (-1)^j k!/(j! (k-2j)! 2^j) beta^{-j} y^{k-2j}."""
    out = []
    for j in range(k // 2 + 1):
        out.append((k - 2 * j, (-1) ** j * math.factorial(k) // (math.factorial(j) * math.factorial(k - 2 * j) * 2 ** j), j))
    return tuple(out)


def _exact_sqrt(q: Fraction) -> Optional[Fraction]:
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


class HermiteSeries:
    """Polynomial expanded in tensor Hermite polynomials of a Gaussian.

    The Gaussian is N(center, I/precision). Internally coefficients are kept
    against the monic basis ``H_k(x) = precision^{-|k|/2} prod_i He_{k_i}(sqrt(precision)(x_i - c_i))``,
    which has rational coefficients in x; :attr:`coeffs` converts them to the
    plain ``He_k(sqrt(precision) (x - c))`` basis.
    """

    __slots__ = ("dim", "precision", "center", "monic")

    def __init__(self, dim: int, precision, center, monic: Mapping[MultiIndex, object]):
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "precision", as_coef(precision))
        object.__setattr__(self, "center", _center(center, dim))
        object.__setattr__(self, "monic", {tuple(k): as_coef(v) for k, v in monic.items() if v != 0})

    def __setattr__(self, name, value):
        raise AttributeError("HermiteSeries is immutable")

    @property
    def coeffs(self) -> Dict[MultiIndex, object]:
        """Coefficients against ``He_k(sqrt(precision)(x - center))``.

        Exact whenever ``precision^{|k|/2}`` is rational, float otherwise.
        """
        beta = self.precision
        root = _exact_sqrt(beta) if is_exact(beta) else None
        out = {}
        for k, c in self.monic.items():
            s = sum(k)
            if s % 2 == 0 and is_exact(beta):
                out[k] = c / beta ** (s // 2)
            elif root is not None:
                out[k] = c / root ** s
            else:
                out[k] = float(c) / float(beta) ** (s / 2)
        return out

    def mean(self):
        """He_0 coefficient, i.e. the Gaussian mean of the represented polynomial."""
        return self.monic.get((0,) * self.dim, Fraction(0))

    def __eq__(self, other):
        if not isinstance(other, HermiteSeries):
            return NotImplemented
        return (self.dim, self.precision, self.center, self.monic) == (
            other.dim, other.precision, other.center, other.monic)

    def __repr__(self):
        return f"HermiteSeries(dim={self.dim}, precision={self.precision}, coeffs={self.coeffs})"


def poly_to_hermite(p: Polynomial, beta, center=None) -> HermiteSeries:
    """Exact change of basis from monomials to Hermite polynomials of N(center, I/beta)."""
    beta = _exact(beta)
    if beta <= 0:
        raise ValueError("beta must be positive")
    center = _center(center, p.dim)
    q = p.shift(center)
    inv = (Fraction(1) / beta) if is_exact(beta) else 1.0 / beta
    out: Dict[MultiIndex, object] = {}
    for alpha, c in q.items():
        expansions = [_monomial_to_hermite_1d(e) for e in alpha]
        # tensor product over coordinates
        partial = [((), c)]
        for exp in expansions:
            nxt = []
            for k, v in partial:
                for ki, ci, j in exp:
                    nxt.append((k + (ki,), v * ci * inv ** j))
            partial = nxt
        for k, v in partial:
            out[k] = out.get(k, 0) + v
    return HermiteSeries(p.dim, beta, center, out)


def hermite_to_poly(h: HermiteSeries) -> Polynomial:
    beta = h.precision
    inv = (Fraction(1) / beta) if is_exact(beta) else 1.0 / beta
    terms: Dict[MultiIndex, object] = {}
    for k, c in h.monic.items():
        partial = [((), c)]
        for ki in k:
            nxt = []
            for a, v in partial:
                for e, ci, j in _hermite_to_monomial_1d(ki):
                    nxt.append((a + (e,), v * ci * inv ** j))
            partial = nxt
        for a, v in partial:
            terms[a] = terms.get(a, 0) + v
    y = Polynomial(h.dim, terms)
    return y.shift(tuple(-c for c in h.center))


def hermite_basis(k: Sequence[int], beta, center=None) -> Polynomial:
    """``prod_i He_{k_i}(sqrt(beta)(x_i - c_i))`` as a polynomial in x.

    Only exact when ``beta^{|k|/2}`` is rational; otherwise coefficients are floats.
    """
    k = tuple(k)
    monic = hermite_to_poly(HermiteSeries(len(k), beta, center, {k: 1}))
    beta = as_coef(beta)
    s = sum(k)
    if s % 2 == 0 and is_exact(beta):
        return monic * beta ** (s // 2)
    root = _exact_sqrt(beta) if is_exact(beta) else None
    if root is not None:
        return monic * root ** s
    return monic * float(beta) ** (s / 2)


# ---------------------------------------------------------------------------
# Bernoulli numbers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def bernoulli(n: int) -> Fraction:
    """Bernoulli number B_n with B_1 = -1/2.

    Uses the recurrence sum_{j=0}^{m} C(m+1, j) B_j = 0 for m >= 1.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return Fraction(1)
    if n > 1 and n % 2 == 1:
        return Fraction(0)
    s = sum(math.comb(n + 1, j) * bernoulli(j) for j in range(n))
    return -s / (n + 1)


# ---------------------------------------------------------------------------
# Text format: "coef * x1^a1*x2^a2 + ..."
# ---------------------------------------------------------------------------

def format_coef(c) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    return repr(float(c))


def _format_monomial(alpha: MultiIndex) -> str:
    return "*".join(f"x{i + 1}^{e}" for i, e in enumerate(alpha) if e)


def format_polynomial(p: Polynomial) -> str:
    if p.is_zero():
        return "0"
    parts = []
    for alpha, c in p.sorted_terms():
        mono = _format_monomial(alpha)
        parts.append(f"{format_coef(c)} * {mono}" if mono else format_coef(c))
    return " + ".join(parts)


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\d*\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|(x\d+)|(\*\*|[-+*/^()]))")


def _tokenize(text: str):
    pos, toks = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"cannot parse polynomial near {text[pos:pos + 12]!r}")
        num, var, op = m.groups()
        if num is not None:
            toks.append(("num", num))
        elif var is not None:
            toks.append(("var", var))
        else:
            toks.append(("op", "^" if op == "**" else op))
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, toks, dim):
        self.toks, self.i, self.dim = toks, 0, dim

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self):
        t = self.peek()
        self.i += 1
        return t

    def expr(self):
        out = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            t = self.term()
            out = out + t if op == "+" else out - t
        return out

    def term(self):
        out = self.factor()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            f = self.factor()
            if op == "*":
                out = out * f
            else:
                if f.degree() > 0:
                    raise ValueError("division by a non-constant")
                out = out / f.constant_term()
        return out

    def factor(self):
        if self.peek() == ("op", "-"):
            self.take()
            return -self.factor()
        if self.peek() == ("op", "+"):
            self.take()
            return self.factor()
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            kind, val = self.take()
            if kind != "num" or not val.isdigit():
                raise ValueError("exponent must be a non-negative integer")
            base = base ** int(val)
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return Polynomial.constant(Fraction(val), self.dim)
        if kind == "var":
            i = int(val[1:]) - 1
            if not 0 <= i < self.dim:
                raise ValueError(f"variable {val} out of range for dimension {self.dim}")
            return Polynomial.var(i, self.dim)
        if (kind, val) == ("op", "("):
            e = self.expr()
            if self.take() != ("op", ")"):
                raise ValueError("unbalanced parentheses")
            return e
        raise ValueError(f"unexpected token {val!r}")


def parse_polynomial(text: str, dim: int) -> Polynomial:
    """Parse the textual format produced by :func:`format_polynomial`.

    Decimal literals are read exactly (``0.1`` becomes 1/10).
    """
    toks = _tokenize(text)
    if not toks:
        raise ValueError("empty polynomial")
    parser = _Parser(toks, dim)
    p = parser.expr()
    if parser.i != len(toks):
        raise ValueError(f"trailing input in polynomial {text!r}")
    return p


def x_poly(dim: int = 1) -> Tuple[Polynomial, ...]:
    """Coordinate polynomials (x1, ..., xd)."""
    return tuple(Polynomial.var(i, dim) for i in range(dim))


def sum_polys(polys: Iterable[Polynomial], dim: int) -> Polynomial:
    out = Polynomial.zero(dim)
    for p in polys:
        out = out + p
    return out
