"""Gaussian Gibbs measures, the Hermite Poisson solver and modified measures.

For an isotropic quadratic potential ``F = (k/2)|x - a|^2 + c`` the Gibbs
measure is N(a, I/(beta k)) and the generator ``L`` acts diagonally on the
Hermite basis of that Gaussian with eigenvalue ``-k|alpha|``. Every Poisson
equation ``L mu = G`` with polynomial ``G`` is therefore solved exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np

from .opalg import DiffOperator, MinibatchSpec, adjoint, apply, generator, lj_from_aj, one_step_expansion
from .polycore import (
    HermiteSeries,
    Polynomial,
    as_coef,
    gaussian_moment,
    hermite_to_poly,
    is_exact,
    poly_to_hermite,
)

FLOAT_SOLVABILITY_TOL = 1e-12


class SolvabilityError(ValueError):
    """The right-hand side of a Poisson equation has non-zero Gibbs mean."""


class UnsupportedPotentialError(ValueError):
    """The potential (or generator) is not an isotropic quadratic."""


def quadratic_parameters(F: Polynomial) -> Tuple[object, Tuple]:
    """Return ``(curvature, center)`` for ``F = (k/2)|x - a|^2 + c``.

    Raises :class:`UnsupportedPotentialError` for anything else.
    """
    d = F.dim
    if F.degree() != 2:
        raise UnsupportedPotentialError("potential must be quadratic")
    k = None
    lin = [Fraction(0)] * d
    for alpha, c in F.items():
        deg = sum(alpha)
        if deg == 2:
            if max(alpha) != 2:
                raise UnsupportedPotentialError("cross terms are not supported (non-isotropic)")
            val = 2 * c
            if k is None:
                k = val
            elif k != val:
                raise UnsupportedPotentialError("potential is not isotropic")
        elif deg == 1:
            lin[alpha.index(1)] = c
    squares = sum(1 for a in F.items() if sum(a[0]) == 2)
    if squares != d:
        raise UnsupportedPotentialError("potential is not isotropic")
    if k <= 0:
        raise UnsupportedPotentialError("potential must be confining (positive curvature)")
    center = tuple(-b / k for b in lin)
    return k, center


def generator_parameters(L: DiffOperator, beta) -> Tuple[object, Tuple]:
    """Recover ``(curvature, center)`` of an OU generator ``-k(x-a).grad + (1/beta) Lap``."""
    beta = as_coef(beta)
    d = L.dim
    k = None
    center = [Fraction(0)] * d
    expected = set()
    for i in range(d):
        e1 = [0] * d
        e1[i] = 1
        e2 = [0] * d
        e2[i] = 2
        expected.update([tuple(e1), tuple(e2)])
        drift = -L.coeff(tuple(e1))
        if drift.degree() != 1 or any(sum(a) == 1 and a[i] != 1 for a, _ in drift.items()):
            raise UnsupportedPotentialError("generator drift is not of OU type")
        ki = drift.coeff(tuple(e1))
        if k is None:
            k = ki
        elif ki != k:
            raise UnsupportedPotentialError("generator is not isotropic")
        center[i] = -drift.constant_term() / ki
        if L.coeff(tuple(e2)) != Polynomial.constant(1 / beta, d):
            raise UnsupportedPotentialError("diffusion part must be (1/beta) Laplacian")
    if set(a for a, _ in L.items()) - expected:
        raise UnsupportedPotentialError("generator has unexpected terms")
    if k is None or k <= 0:
        raise UnsupportedPotentialError("generator must have positive curvature")
    return k, tuple(center)


@dataclass(frozen=True)
class GibbsMeasure:
    """rho proportional to exp(-beta F) for an isotropic quadratic F."""

    potential: Polynomial
    beta: object
    curvature: object = field(init=False)
    center: Tuple = field(init=False)

    def __post_init__(self):
        beta = as_coef(self.beta)
        if beta <= 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "beta", beta)
        k, c = quadratic_parameters(self.potential)
        object.__setattr__(self, "curvature", k)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def precision(self):
        return self.beta * self.curvature

    @property
    def log_normalizer(self) -> float:
        """log of int exp(-beta (F - F_min)) dx, the Gaussian normaliser."""
        return 0.5 * self.dim * math.log(2 * math.pi / float(self.precision))

    def generator(self) -> DiffOperator:
        return generator(self.potential, self.beta)

    def mean(self, p: Polynomial):
        return gaussian_moment(p, self.precision, self.center)

    def pdf(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if self.dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
            arr = arr[..., None]
        diff = arr - np.array([float(c) for c in self.center])
        q = np.sum(diff * diff, axis=-1)
        return np.exp(-0.5 * float(self.precision) * q - self.log_normalizer)


def solve_poisson(L: DiffOperator, G: Polynomial, beta) -> Polynomial:
    """Centered solution of ``L mu = G`` for an OU-type generator.

    Expands ``G`` in the Hermite basis of the generator's Gibbs measure and
    divides the ``k``-th coefficient by ``-curvature * |k|``.
    """
    beta = as_coef(beta)
    k, center = generator_parameters(L, beta)
    series = poly_to_hermite(G, beta * k, center)
    _check_solvable(series)
    out = {}
    for idx, c in series.monic.items():
        s = sum(idx)
        if s == 0:
            continue
        out[idx] = c / (-k * s)
    return hermite_to_poly(HermiteSeries(G.dim, beta * k, center, out))


def _check_solvable(series: HermiteSeries):
    c0 = series.mean()
    if c0 == 0:
        return
    if is_exact(c0) and all(is_exact(v) for v in series.monic.values()):
        raise SolvabilityError(f"right-hand side has non-zero Gibbs mean {c0}")
    scale = max(abs(float(v)) for v in series.monic.values())
    if abs(float(c0)) >= FLOAT_SOLVABILITY_TOL * scale:
        raise SolvabilityError(f"right-hand side has non-zero Gibbs mean {float(c0):.3e}")


def build_mu_cascade(L: DiffOperator, Ls: Sequence[DiffOperator], F: Polynomial, beta) -> List[Polynomial]:
    """Correction densities mu_1..mu_N.

    ``L mu_m = -sum_{l=1}^m L_l^* mu_{m-l}`` with ``mu_0 = 1``, each solution centered.
    """
    d = F.dim
    stars = [adjoint(op, F, beta) for op in Ls]
    mus = [Polynomial.constant(1, d)]
    for m in range(1, len(Ls) + 1):
        G = Polynomial.zero(d)
        for ell in range(1, m + 1):
            G = G - apply(stars[ell - 1], mus[m - ell])
        try:
            mus.append(solve_poisson(L, G, beta))
        except SolvabilityError as exc:
            raise SolvabilityError(f"cascade step {m}: {exc}") from exc
    return mus[1:]


@dataclass(frozen=True)
class ModifiedMeasure:
    """``rho (1 + eta mu_1 + ... + eta^N mu_N)``; possibly a signed measure."""

    base: GibbsMeasure
    corrections: Tuple[Polynomial, ...]
    eta: object

    def __post_init__(self):
        object.__setattr__(self, "corrections", tuple(self.corrections))
        object.__setattr__(self, "eta", as_coef(self.eta))
        if self.eta < 0:
            raise ValueError("eta must be non-negative")

    @property
    def order(self) -> int:
        return len(self.corrections)

    @property
    def dim(self) -> int:
        return self.base.dim

    def weight(self) -> Polynomial:
        """The polynomial factor ``1 + sum eta^k mu_k``."""
        w = Polynomial.constant(1, self.dim)
        for k, mu in enumerate(self.corrections, start=1):
            w = w + mu * self.eta ** k
        return w

    def with_eta(self, eta) -> "ModifiedMeasure":
        return ModifiedMeasure(self.base, self.corrections, eta)

    def truncate(self, order: int) -> "ModifiedMeasure":
        return ModifiedMeasure(self.base, self.corrections[:order], self.eta)


def measure_integrate(pi: ModifiedMeasure, phi: Polynomial):
    """``rho(phi) + sum_k eta^k rho(phi mu_k)``; exact for rational eta."""
    if not isinstance(phi, Polynomial):
        phi = Polynomial.constant(phi, pi.dim)
    if phi.dim != pi.dim:
        raise ValueError("dimension mismatch")
    total = pi.base.mean(phi)
    for k, mu in enumerate(pi.corrections, start=1):
        total = total + pi.eta ** k * pi.base.mean(phi * mu)
    return total


def density(pi: ModifiedMeasure, x) -> np.ndarray:
    """Signed density ``rho(x) (1 + sum eta^k mu_k(x))``."""
    rho = pi.base.pdf(x)
    return rho * np.asarray(pi.weight()(x), dtype=float)


def negativity_threshold(pi1: ModifiedMeasure):
    """Step size above which the first-order density is negative at the Gibbs mode."""
    if pi1.order != 1:
        raise ValueError("negativity threshold is defined for first-order measures")
    mu1 = pi1.corrections[0]
    mu0 = mu1.shift(pi1.base.center).constant_term()
    if mu0 >= 0:
        raise ValueError("mu_1 is non-negative at the mode; no threshold")
    return -1 / mu0


def modified_measure(batch: MinibatchSpec, F: Polynomial, beta, order: int, eta) -> ModifiedMeasure:
    """Run the full pipeline: A_j, L_j, Poisson cascade, assembly."""
    base = GibbsMeasure(F, beta)
    L = base.generator()
    if order == 0:
        return ModifiedMeasure(base, (), eta)
    A = one_step_expansion(batch, base.beta, order + 1)
    Ls = lj_from_aj(A, order, L)
    mus = build_mu_cascade(L, Ls, F, base.beta)
    return ModifiedMeasure(base, tuple(mus), eta)


def ou_measure(beta, order: int, eta, dim: int = 1, convention: str = "expansion") -> ModifiedMeasure:
    """Modified measure for F = |x|^2/2 with a deterministic gradient.

    ``convention="expansion"`` uses the direct one-step moment expansion;
    ``convention="doubled"`` reproduces the alternative first-order correction
    ``(beta/2)|x|^2 - d/2`` (twice the expansion value) and supports order 1 only.
    """
    F = sum((Polynomial.var(i, dim) ** 2 for i in range(dim)), Polynomial.zero(dim)) * Fraction(1, 2)
    if convention == "expansion":
        return modified_measure(MinibatchSpec.full(F), F, beta, order, eta)
    if convention == "doubled":
        if order != 1:
            raise ValueError("the doubled convention is only defined at first order")
        beta = as_coef(beta)
        mu1 = F * beta - Fraction(dim, 2)
        return ModifiedMeasure(GibbsMeasure(F, beta), (mu1,), eta)
    raise ValueError(f"unknown convention {convention!r}")
