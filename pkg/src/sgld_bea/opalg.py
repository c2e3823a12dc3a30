"""Differential operators with polynomial coefficients.

An operator is a finite sum ``sum_alpha phi_alpha(x) d^alpha``. This module
builds the Langevin generator, the one-step expansion operators ``A_j`` of a
minibatch Langevin step, the correction operators ``L_j`` obtained from them
by the Bernoulli-number (formal logarithm) recursion, and adjoints with
respect to Gibbs measures ``exp(-beta F)``.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Number
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .polycore import (
    MultiIndex,
    Polynomial,
    as_coef,
    bernoulli,
    format_polynomial,
    parse_polynomial,
)


class UnsupportedOrderError(ValueError):
    """Raised for minibatch moments of an order the closed form does not cover."""


def _sub_idx(a, b):
    return tuple(i - j for i, j in zip(a, b))


def _add_idx(a, b):
    return tuple(i + j for i, j in zip(a, b))


def _sub_indices(alpha):
    return itertools.product(*(range(a + 1) for a in alpha))


def _multi_binom(alpha, gamma):
    r = 1
    for a, g in zip(alpha, gamma):
        r *= math.comb(a, g)
    return r


def _multi_factorial(alpha):
    r = 1
    for a in alpha:
        r *= math.factorial(a)
    return r


class DiffOperator:
    """``sum_alpha phi_alpha(x) d^alpha`` in normal form (coefficients on the left)."""

    __slots__ = ("dim", "_terms")

    def __init__(self, dim: int, terms: Optional[Mapping[MultiIndex, Polynomial]] = None):
        clean: Dict[MultiIndex, Polynomial] = {}
        for alpha, phi in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim:
                raise ValueError(f"derivative index {alpha} has wrong dimension")
            if isinstance(phi, Number):
                phi = Polynomial.constant(phi, dim)
            if phi.dim != dim:
                raise ValueError("coefficient dimension mismatch")
            if alpha in clean:
                phi = clean[alpha] + phi
            if phi.is_zero():
                clean.pop(alpha, None)
            else:
                clean[alpha] = phi
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "_terms", clean)

    def __setattr__(self, name, value):
        raise AttributeError("DiffOperator is immutable")

    @classmethod
    def identity(cls, dim: int) -> "DiffOperator":
        return cls(dim, {(0,) * dim: Polynomial.constant(1, dim)})

    @classmethod
    def zero(cls, dim: int) -> "DiffOperator":
        return cls(dim)

    @classmethod
    def partial(cls, alpha: Sequence[int], coef=None) -> "DiffOperator":
        dim = len(alpha)
        coef = Polynomial.constant(1, dim) if coef is None else coef
        return cls(dim, {tuple(alpha): coef})

    @classmethod
    def multiplication(cls, phi: Polynomial) -> "DiffOperator":
        return cls(phi.dim, {(0,) * phi.dim: phi})

    @property
    def terms(self) -> Dict[MultiIndex, Polynomial]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, alpha) -> Polynomial:
        return self._terms.get(tuple(alpha), Polynomial.zero(self.dim))

    def order(self) -> int:
        return max((sum(a) for a in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def __eq__(self, other):
        if not isinstance(other, DiffOperator):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, frozenset(self._terms.items())))

    def _check(self, other):
        if not isinstance(other, DiffOperator):
            raise TypeError("expected a DiffOperator")
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        self._check(other)
        out = dict(self._terms)
        for a, phi in other._terms.items():
            v = out[a] + phi if a in out else phi
            if v.is_zero():
                out.pop(a, None)
            else:
                out[a] = v
        return _raw_op(self.dim, out)

    def __neg__(self):
        return _raw_op(self.dim, {a: -p for a, p in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        """Scalar or polynomial left-multiplication; use ``@`` for composition."""
        if isinstance(other, (Number, Polynomial)):
            out = {a: p * other for a, p in self._terms.items()}
            return DiffOperator(self.dim, out)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        return compose(self, other)

    def __call__(self, p: Polynomial) -> Polynomial:
        return apply(self, p)

    def __str__(self):
        return format_operator(self)

    def __repr__(self):
        return f"DiffOperator({self.dim}, {format_operator(self)!r})"


def _raw_op(dim, terms):
    op = DiffOperator.__new__(DiffOperator)
    object.__setattr__(op, "dim", dim)
    object.__setattr__(op, "_terms", terms)
    return op


def apply(op: DiffOperator, p: Polynomial) -> Polynomial:
    if op.dim != p.dim:
        raise ValueError(f"dimension mismatch: operator d={op.dim}, polynomial d={p.dim}")
    out = Polynomial.zero(p.dim)
    for alpha, phi in op.items():
        dp = p.diff_multi(alpha)
        if not dp.is_zero():
            out = out + phi * dp
    return out


def compose(a: DiffOperator, b: DiffOperator) -> DiffOperator:
    """Operator product ``a o b`` normalised with the Leibniz rule.

    ``phi d^alpha (psi d^beta) = sum_{gamma<=alpha} C(alpha,gamma) phi (d^gamma psi) d^{alpha-gamma+beta}``.
    """
    a._check(b)
    dim = a.dim
    # accumulate raw monomial dicts per derivative index; avoids intermediate polynomials
    acc: Dict[MultiIndex, Dict[MultiIndex, object]] = {}
    for alpha, phi in a.items():
        phi_terms = list(phi.items())
        for gamma in _sub_indices(alpha):
            binom = _multi_binom(alpha, gamma)
            rest = _sub_idx(alpha, gamma)
            for beta_, psi in b.items():
                dpsi = psi.diff_multi(gamma)
                if dpsi.is_zero():
                    continue
                bucket = acc.setdefault(_add_idx(rest, beta_), {})
                for m1, c1 in phi_terms:
                    c1b = c1 * binom
                    for m2, c2 in dpsi.items():
                        m = _add_idx(m1, m2)
                        bucket[m] = bucket.get(m, 0) + c1b * c2
    out = {}
    for key, bucket in acc.items():
        poly = Polynomial._raw(dim, {m: c for m, c in bucket.items() if c != 0})
        if not poly.is_zero():
            out[key] = poly
    return _raw_op(dim, out)


def op_power(op: DiffOperator, k: int) -> DiffOperator:
    out = DiffOperator.identity(op.dim)
    for _ in range(k):
        out = compose(out, op)
    return out


def generator(F: Polynomial, beta) -> DiffOperator:
    """Langevin generator ``-<grad F, grad> + (1/beta) Laplacian``."""
    beta = as_coef(beta)
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = F.dim
    inv = 1 / beta
    terms: Dict[MultiIndex, Polynomial] = {}
    for i in range(d):
        e1 = [0] * d
        e1[i] = 1
        terms[tuple(e1)] = -F.diff(i)
        e2 = [0] * d
        e2[i] = 2
        terms[tuple(e2)] = Polynomial.constant(inv, d)
    return DiffOperator(d, terms)


def adjoint(op: DiffOperator, F: Polynomial, beta) -> DiffOperator:
    """Adjoint in L^2(rho) for rho proportional to exp(-beta F).

    Built from ``d_i* = -d_i + beta (d_i F)`` and ``(phi d^alpha)* = (d^alpha)* o phi``.
    The ``d_i*`` commute, so ``(d^alpha)*`` is any ordered product of them.
    """
    beta = as_coef(beta)
    d = op.dim
    if F.dim != d:
        raise ValueError("potential dimension mismatch")
    grads = F.gradient()
    star = []
    for i in range(d):
        e = [0] * d
        e[i] = 1
        star.append(DiffOperator(d, {tuple(e): Polynomial.constant(-1, d),
                                     (0,) * d: grads[i] * beta}))

    @lru_cache(maxsize=None)
    def star_power(alpha):
        if sum(alpha) == 0:
            return DiffOperator.identity(d)
        i = next(j for j, a in enumerate(alpha) if a)
        rest = list(alpha)
        rest[i] -= 1
        return compose(star[i], star_power(tuple(rest)))

    out = DiffOperator.zero(d)
    for alpha, phi in op.items():
        out = out + compose(star_power(alpha), DiffOperator.multiplication(phi))
    return out


# ---------------------------------------------------------------------------
# Minibatch moments and the one-step expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MinibatchSpec:
    """Per-datum gradient polynomials and a with-replacement batch size."""

    gradients: Tuple[Tuple[Polynomial, ...], ...]
    batch_size: int
    sampling: str = "with-replacement"

    def __post_init__(self):
        grads = tuple(tuple(g) for g in self.gradients)
        object.__setattr__(self, "gradients", grads)
        if not grads:
            raise ValueError("need at least one datum")
        d = len(grads[0])
        if any(len(g) != d or any(p.dim != d for p in g) for g in grads):
            raise ValueError("inconsistent gradient dimensions")
        if not 1 <= self.batch_size <= len(grads):
            raise ValueError(f"batch size must be in 1..{len(grads)}")
        if self.sampling != "with-replacement":
            raise ValueError("only with-replacement sampling is supported")

    @classmethod
    def full(cls, potential: Polynomial) -> "MinibatchSpec":
        """Deterministic gradient of a single potential."""
        return cls((potential.gradient(),), 1)

    @property
    def dim(self) -> int:
        return len(self.gradients[0])

    @property
    def n(self) -> int:
        return len(self.gradients)

    def mean_gradient(self) -> Tuple[Polynomial, ...]:
        n = self.n
        return tuple(sum((g[i] for g in self.gradients), Polynomial.zero(self.dim)) * Fraction(1, n)
                     for i in range(self.dim))

    def is_deterministic(self) -> bool:
        first = self.gradients[0]
        return all(g == first for g in self.gradients[1:])


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def minibatch_gradient_moment(batch: MinibatchSpec, indices: Sequence[int]) -> Polynomial:
    """E over the minibatch of ``prod_m d_{i_m} F_zeta(x)``.

    With ``n_b`` i.i.d. uniform draws, grouping the product's factors by which
    draw they come from gives a sum over set partitions ``P`` of the factor
    positions: ``(n_b)_{|P|} / n_b^r * prod_{B in P} avg_i prod_{m in B} d_{i_m} f_i``.
    """
    d = batch.dim
    r = len(indices)
    if r == 0:
        return Polynomial.constant(1, d)
    if any(not 0 <= i < d for i in indices):
        raise ValueError("coordinate index out of range")
    if batch.is_deterministic():
        g = batch.gradients[0]
        out = Polynomial.constant(1, d)
        for i in indices:
            out = out * g[i]
        return out
    if r > 3:
        raise UnsupportedOrderError(f"minibatch moments of order {r} > 3 are not supported")
    nb, n = batch.batch_size, batch.n
    out = Polynomial.zero(d)
    cache: Dict[Tuple[int, ...], Polynomial] = {}
    for part in _set_partitions(list(range(r))):
        k = len(part)
        weight = Fraction(math.perm(nb, k), nb ** r)
        if weight == 0:
            continue
        term = Polynomial.constant(weight, d)
        for block in part:
            key = tuple(sorted(indices[m] for m in block))
            if key not in cache:
                acc = Polynomial.zero(d)
                for g in batch.gradients:
                    prod = Polynomial.constant(1, d)
                    for i in key:
                        prod = prod * g[i]
                    acc = acc + prod
                cache[key] = acc * Fraction(1, n)
            term = term * cache[key]
        out = out + term
    return out


def _even_multi_indices(dim, total):
    """Multi-indices with even entries summing to ``total``."""
    if total % 2:
        return
    for half in _compositions_bounded(total // 2, dim):
        yield tuple(2 * h for h in half)


def _compositions_bounded(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions_bounded(total - first, parts - 1):
            yield (first,) + rest


def one_step_expansion(batch: MinibatchSpec, beta, order: int) -> List[DiffOperator]:
    """Operators A_0..A_order with E[phi(X_1) | X_0 = x] = sum_j eta^j A_j phi(x).

    One step is ``x - eta g + sqrt(2 eta / beta) xi`` with g the minibatch
    gradient. Taylor-expanding phi and taking moments,

        A_j = sum_{|gamma| + |delta|/2 = j} (-1)^|gamma| / (gamma! delta!)
              E[g^gamma] (2/beta)^{|delta|/2} E[xi^delta] d^{gamma+delta}

    where delta runs over even multi-indices.
    """
    if order < 1:
        raise ValueError("expansion order must be at least 1")
    beta = as_coef(beta)
    d = batch.dim
    two_over_beta = 2 / beta
    ops = [DiffOperator.identity(d)]
    for j in range(1, order + 1):
        terms: Dict[MultiIndex, Polynomial] = {}
        for g_order in range(j + 1):
            noise_total = 2 * (j - g_order)
            for gamma in _compositions_bounded(g_order, d):
                idx = [i for i, e in enumerate(gamma) for _ in range(e)]
                moment = minibatch_gradient_moment(batch, idx)
                if moment.is_zero():
                    continue
                for delta in _even_multi_indices(d, noise_total):
                    gauss = 1
                    for e in delta:
                        gauss *= _double_fact(e)
                    c = Fraction((-1) ** g_order * gauss, _multi_factorial(gamma) * _multi_factorial(delta))
                    c = c * two_over_beta ** (noise_total // 2)
                    key = _add_idx(gamma, delta)
                    val = moment * c
                    terms[key] = terms[key] + val if key in terms else val
        ops.append(DiffOperator(d, terms))
    return ops


def _double_fact(m):
    r = 1
    for k in range(m - 1, 0, -2):
        r *= k
    return r


def _compositions(total, parts):
    """Ordered tuples of ``parts`` non-negative ints summing to ``total``."""
    return _compositions_bounded(total, parts)


def lj_from_aj(A: Sequence[DiffOperator], up_to: int,
               generator_op: Optional[DiffOperator] = None) -> List[DiffOperator]:
    """Correction operators L_1..L_N from the one-step operators A_0..A_{N+1}.

    Inverts exp(eta (L + eta L_1 + ...)) = sum_j eta^j A_j through

        L_j = sum_{l=0}^{j} B_l / l! sum_{n_1+...+n_{l+1} = j-l}
              L_{n_1} ... L_{n_l} A_{n_{l+1}+1},      L_0 = A_1.
    """
    if up_to < 0:
        raise ValueError("up_to must be non-negative")
    if len(A) < up_to + 2:
        raise ValueError(f"need A_0..A_{up_to + 1}, got {len(A)} operators")
    d = A[0].dim
    if A[0] != DiffOperator.identity(d):
        raise ValueError("A_0 must be the identity")
    if generator_op is not None and A[1] != generator_op:
        raise ValueError("A_1 must equal the generator")
    if A[1].order() > 2 or not A[1].coeff((0,) * d).is_zero():
        raise ValueError("A_1 must be a second-order operator without zeroth-order term")

    Ls: List[DiffOperator] = [A[1]]
    products: Dict[Tuple[int, ...], DiffOperator] = {(): DiffOperator.identity(d)}

    def chain(ns):
        if ns not in products:
            products[ns] = compose(chain(ns[:-1]), Ls[ns[-1]])
        return products[ns]

    for j in range(1, up_to + 1):
        Lj = A[j + 1]
        for ell in range(1, j + 1):
            b = bernoulli(ell)
            if b == 0:
                continue
            w = b / math.factorial(ell)
            acc = DiffOperator.zero(d)
            for ns in _compositions(j - ell, ell + 1):
                acc = acc + compose(chain(tuple(ns[:-1])), A[ns[-1] + 1])
            Lj = Lj + acc * w
        Ls.append(Lj)
    return Ls[1:]


def exp_series(Ls: Sequence[DiffOperator], order: int) -> List[DiffOperator]:
    """Coefficients of eta^0..eta^order in exp(eta (L_0 + eta L_1 + ...)).

    ``Ls[0]`` is the generator. Used to check ``lj_from_aj`` by re-expansion.
    """
    d = Ls[0].dim
    # curly[m]: coefficient of eta^m in eta * calL
    curly = [DiffOperator.zero(d)] + [Ls[m - 1] if m - 1 < len(Ls) else DiffOperator.zero(d)
                                      for m in range(1, order + 1)]
    result = [DiffOperator.identity(d)] + [DiffOperator.zero(d) for _ in range(order)]
    power = [DiffOperator.identity(d)] + [DiffOperator.zero(d) for _ in range(order)]
    for k in range(1, order + 1):
        nxt = [DiffOperator.zero(d) for _ in range(order + 1)]
        for m in range(order + 1):
            if power[m].is_zero():
                continue
            for s in range(1, order + 1 - m):
                if curly[s].is_zero():
                    continue
                nxt[m + s] = nxt[m + s] + compose(power[m], curly[s])
        power = nxt
        w = Fraction(1, math.factorial(k))
        for m in range(order + 1):
            if not power[m].is_zero():
                result[m] = result[m] + power[m] * w
    return result


# ---------------------------------------------------------------------------
# Text format: "(poly)*D[a1,...,ad] + ..."
# ---------------------------------------------------------------------------

def format_operator(op: DiffOperator) -> str:
    if op.is_zero():
        return "0"
    keys = sorted(op._terms, key=lambda a: (sum(a), tuple(-e for e in a)))
    return " + ".join(f"({format_polynomial(op._terms[a])})*D[{','.join(map(str, a))}]" for a in keys)


_OP_TERM = re.compile(r"\s*\*\s*D\[([\d,\s]*)\]\s*")


def parse_operator(text: str, dim: int) -> DiffOperator:
    text = text.strip()
    if text == "0":
        return DiffOperator.zero(dim)
    terms: Dict[MultiIndex, Polynomial] = {}
    pos = 0
    while pos < len(text):
        while pos < len(text) and text[pos] in " +":
            pos += 1
        if pos >= len(text):
            break
        if text[pos] != "(":
            raise ValueError(f"expected '(' at position {pos} in operator text")
        depth, end = 0, pos
        for end in range(pos, len(text)):
            depth += {"(": 1, ")": -1}.get(text[end], 0)
            if depth == 0:
                break
        if depth:
            raise ValueError("unbalanced parentheses in operator text")
        coef = parse_polynomial(text[pos + 1:end], dim)
        m = _OP_TERM.match(text, end + 1)
        if not m:
            raise ValueError(f"expected '*D[...]' after coefficient at position {end + 1}")
        alpha = tuple(int(s) for s in m.group(1).split(",") if s.strip())
        if len(alpha) != dim:
            raise ValueError(f"derivative tag {alpha} does not match dimension {dim}")
        terms[alpha] = terms[alpha] + coef if alpha in terms else coef
        pos = m.end()
    return DiffOperator(dim, terms)
