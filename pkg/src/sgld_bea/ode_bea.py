"""Backward error analysis of explicit Euler for scalar polynomial ODEs.

For y' = f(y) the Euler map y -> y + eta f(y) is, to any finite order, the
exact time-eta flow of a modified equation

    y' = f(y) + eta c_1(y) + eta^2 c_2(y) + ...

The c_l are found by expanding the flow with the Lie derivative
D = (f + eta c_1 + ...) d/dy, i.e. y(eta) = sum_k eta^k D^k y / k!, and
requiring every coefficient beyond eta^1 to vanish.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np

from .polycore import Polynomial, as_coef

MAX_ORDER = 6


@dataclass(frozen=True)
class ModifiedSeries:
    rhs: Polynomial
    coefficients: Tuple[Polynomial, ...]

    @property
    def order(self) -> int:
        return len(self.coefficients)

    def truncated_rhs(self, eta, order: int = None) -> Polynomial:
        """f + sum_{l <= order} eta^l c_l as a polynomial in y."""
        order = self.order if order is None else order
        if order > self.order:
            raise ValueError("requested order exceeds the computed series")
        out = self.rhs
        eta = as_coef(eta)
        for ell in range(1, order + 1):
            out = out + self.coefficients[ell - 1] * eta ** ell
        return out


def _flow_expansion(fields: Sequence[Polynomial], order: int) -> List[Polynomial]:
    """Coefficients of eta^0..eta^order of exp(eta D) y, D = sum_l eta^l fields[l] d/dy."""
    zero = Polynomial.zero(1)
    y = Polynomial.var(0, 1)
    # term[m] is the eta^m coefficient of (eta D)^k y / k! for the current k
    term = [y] + [zero] * order
    total = list(term)
    for k in range(1, order + 1):
        nxt = [zero] * (order + 1)
        for m, t in enumerate(term):
            if t.is_zero():
                continue
            dt = t.diff(0)
            if dt.is_zero():
                continue
            for ell, f in enumerate(fields):
                s = m + 1 + ell
                if s > order:
                    break
                nxt[s] = nxt[s] + f * dt
        term = [t * Fraction(1, k) for t in nxt]
        total = [a + b for a, b in zip(total, term)]
    return total


def modified_coefficients(rhs: Polynomial, order: int) -> ModifiedSeries:
    """c_1..c_order of the modified equation of explicit Euler, exactly."""
    if rhs.dim != 1:
        raise ValueError("only scalar ODEs are supported")
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 0..{MAX_ORDER}")
    fields = [rhs]
    for j in range(1, order + 1):
        exp = _flow_expansion(fields + [Polynomial.zero(1)], j + 1)
        fields.append(-exp[j + 1])
    return ModifiedSeries(rhs, tuple(fields[1:]))


def matching_residual(series: ModifiedSeries) -> List[Polynomial]:
    """Coefficients of eta^0..eta^{N+1} of (modified flow at eta) - (Euler map).

    All vanish for a correct series.
    """
    y = Polynomial.var(0, 1)
    exp = _flow_expansion([series.rhs] + list(series.coefficients), series.order + 1)
    euler = [y, series.rhs] + [Polynomial.zero(1)] * series.order
    return [a - b for a, b in zip(exp, euler)]


def euler_run(rhs: Polynomial, eta, steps: int, y0) -> list:
    """Explicit Euler iterates y_0..y_steps.

    Exact rationals when ``eta`` and ``y0`` are exact, floats otherwise.
    Raises :class:`OverflowError` if an iterate stops being finite.
    """
    eta, y = as_coef(eta), as_coef(y0)
    coeffs = [(a[0], c) for a, c in rhs.items()]
    out = [y]
    for k in range(steps):
        fy = sum((c * y ** e for e, c in coeffs), Fraction(0))
        y = y + eta * fy
        if isinstance(y, float) and not math.isfinite(y):
            raise OverflowError(f"Euler iterate blew up at step {k + 1}")
        out.append(y)
    return out


def _rk4_flow(p: Polynomial, y0: float, t_grid: np.ndarray, substeps: int) -> np.ndarray:
    """Classical RK4 of y' = p(y), sampled at ``t_grid`` with ``substeps`` per interval."""
    coeffs = [0.0] * (max(p.degree(), 0) + 1)
    for a, c in p.items():
        coeffs[a[0]] = float(c)
    coeffs.reverse()

    def f(y):
        acc = 0.0
        for c in coeffs:
            acc = acc * y + c
        return acc

    out = [y0]
    y = y0
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        h = (t1 - t0) / substeps
        for _ in range(substeps):
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(y):
            raise OverflowError("reference flow blew up inside the horizon")
        out.append(y)
    return np.asarray(out)


def modified_flow(series: ModifiedSeries, order: int, eta: float, y0: float, steps: int,
                  substeps: int = 100) -> np.ndarray:
    """Truncated modified flow at times k*eta (k = 0..steps), by RK4 with step eta/substeps."""
    p = series.truncated_rhs(eta, order)
    return _rk4_flow(p, float(y0), eta * np.arange(steps + 1), substeps)


@dataclass(frozen=True)
class OrderStudy:
    order: int
    etas: Tuple[float, ...]
    max_errors: Tuple[float, ...]
    slope: float


def bea_order_study(rhs: Polynomial, order: int, etas: Sequence[float], horizon: float = 0.8,
                    y0: float = 1.0, substeps: int = 100) -> OrderStudy:
    """Fit the order of max_k |y_k - y~_N(k eta)| over k eta <= horizon in eta.

    Expect a slope of about ``order + 1``.
    """
    series = modified_coefficients(rhs, max(order, 0))
    errors = []
    for eta in etas:
        steps = int(math.floor(horizon / eta + 1e-9))
        ys = np.asarray([float(v) for v in euler_run(rhs, float(eta), steps, float(y0))])
        ref = modified_flow(series, order, eta, y0, steps, substeps)
        errors.append(float(np.max(np.abs(ys - ref))))
    slope = float(np.polyfit(np.log(etas), np.log(errors), 1)[0])
    return OrderStudy(order, tuple(float(e) for e in etas), tuple(errors), slope)


def curve_data(rhs: Polynomial, eta: float, orders: Sequence[int], horizon: float, y0: float = 1.0,
               substeps: int = 100):
    """Columns t, euler, modified_N... on the Euler grid up to ``horizon``."""
    series = modified_coefficients(rhs, max(orders))
    steps = int(math.floor(horizon / eta + 1e-9))
    t = eta * np.arange(steps + 1)
    cols = {"t": t, "euler": np.asarray([float(v) for v in euler_run(rhs, eta, steps, y0)])}
    for N in orders:
        cols[f"modified_{N}"] = modified_flow(series, N, eta, y0, steps, substeps)
    return cols
