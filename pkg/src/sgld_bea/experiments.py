"""Experiment drivers: each returns tables plus pass/fail gates.

The drivers are pure functions of their parameters (seed included); the CLI
wraps them with config parsing and CSV output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from .langevin_sim import SgldConfig, gaussian_raw_moment, kde_smooth, ou_discrete_law, sgld_run
from .learnlab import (
    DataDistribution,
    LossSpec,
    generalization_gap_mc,
    loglog_slope,
    runtime_budget,
    stability_sweep,
)
from .measures import density, measure_integrate, ou_measure
from .ode_bea import bea_order_study, curve_data, modified_coefficients
from .polycore import Polynomial, format_polynomial

UNDERPOWERED_FRACTION = 0.2


class Underpowered(RuntimeError):
    """Monte Carlo noise is too large for the requested comparison."""


@dataclass
class Outcome:
    tables: Dict[str, Tuple[List[str], List[tuple]]]
    gates: Dict[str, bool]
    underpowered: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.gates.values()) and not self.underpowered


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


# ---------------------------------------------------------------------------
# Order study
# ---------------------------------------------------------------------------

@dataclass
class OrderStudyResult:
    etas: List[float]
    errors: Dict[str, List[float]]
    stderrs: Dict[str, List[float]]
    used: Dict[str, List[bool]]
    slopes: Dict[str, float]
    sweep_eta: float = float("nan")
    sweep_steps: List[int] = field(default_factory=list)
    sweep_gap: List[float] = field(default_factory=list)
    sweep_stderr: List[float] = field(default_factory=list)
    decay_factor: float = float("nan")
    decay_rate: float = float("nan")
    decay_rate_exact: float = float("nan")

    @property
    def slope(self) -> float:
        return self.slopes.get("x^2", float("nan"))


TEST_FUNCTIONS = {"x^2": 2, "x^4": 4}


def stationary_weak_errors(beta, order: int, etas: Sequence, steps=math.inf, x0: float = 0.0,
                           estimator: str = "exact", replicas: int = 10000, seed: int = 0):
    """|E phi(X_k) - pi^N(phi)| for phi in {x^2, x^4} on the OU chain, per eta."""
    x = Polynomial.var(0, 1)
    errors = {k: [] for k in TEST_FUNCTIONS}
    stderrs = {k: [] for k in TEST_FUNCTIONS}
    for eta in etas:
        pi = ou_measure(_frac(beta), order, _frac(eta))
        if estimator == "exact":
            mean, var = ou_discrete_law(float(eta), float(beta), steps, x0)
            est = {k: gaussian_raw_moment(mean, var, p) for k, p in TEST_FUNCTIONS.items()}
            se = {k: 0.0 for k in TEST_FUNCTIONS}
        elif estimator == "mc":
            if steps == math.inf:
                raise ValueError("Monte Carlo needs a finite step count")
            cfg = SgldConfig(eta=float(eta), beta=float(beta), steps=int(steps), replicas=replicas,
                             x0=(x0,), seed=seed)
            stats = sgld_run(LossSpec("centered"), None, cfg, [x ** p for p in TEST_FUNCTIONS.values()])
            est = {k: float(stats.means[-1, j]) for j, k in enumerate(TEST_FUNCTIONS)}
            se = {k: float(stats.stderrs[-1, j]) for j, k in enumerate(TEST_FUNCTIONS)}
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        for k, p in TEST_FUNCTIONS.items():
            errors[k].append(abs(est[k] - float(measure_integrate(pi, x ** p))))
            stderrs[k].append(se[k])
    return errors, stderrs


def fit_decay(ks, gaps, stderrs):
    """Fit gap_k = a r^k + c (weighted by stderr); returns (a, r, c)."""
    ks = np.asarray(ks, float)
    gaps = np.asarray(gaps, float)
    sigma = np.asarray(stderrs, float)
    positive = sigma[sigma > 0]
    # deterministic points (e.g. k = 0) get the smallest observed noise level
    sigma = np.maximum(sigma, positive.min() if positive.size else 1.0)
    r0 = 0.5
    if gaps[0] != gaps[-1] and len(ks) > 2:
        ratio = (gaps[1] - gaps[-1]) / (gaps[0] - gaps[-1])
        if 0 < ratio < 1:
            r0 = ratio
    p0 = (gaps[0] - gaps[-1], r0, gaps[-1])
    (a, r, c), _ = curve_fit(lambda k, a, r, c: a * r ** k + c, ks, gaps, p0=p0, sigma=sigma,
                             bounds=([-np.inf, 1e-9, -np.inf], [np.inf, 1.0, np.inf]), maxfev=20000)
    return float(a), float(r), float(c)


def run_order_study(beta=1, order: int = 1, etas=(0.05, 0.1, 0.2, 0.3, 0.4), estimator: str = "exact",
                    steps=math.inf, replicas: int = 10000, seed: int = 0, x0: float = 0.0,
                    sweep_eta: Optional[float] = 0.2, sweep_steps: int = 30, sweep_x0: float = 3.0,
                    sweep_replicas: int = 10000) -> OrderStudyResult:
    """Weak error against pi^N across eta, plus the geometric decay in k at fixed eta.

    Slopes are fitted only over eta values whose Monte Carlo standard error is
    below 20% of the measured error; with no usable points :class:`Underpowered`
    is raised. The k-sweep fits ``a r^k + c`` to E x^2(X_k) - pi^N(x^2) and
    reports ``-log(r)/eta`` next to the exact OU value ``-2 log(1-eta)/eta``.
    """
    etas = list(etas)
    errors, stderrs = stationary_weak_errors(beta, order, etas, steps, x0, estimator, replicas, seed)
    used, slopes = {}, {}
    for k in TEST_FUNCTIONS:
        ok = [e > 0 and s < UNDERPOWERED_FRACTION * e for e, s in zip(errors[k], stderrs[k])]
        used[k] = ok
        pts = [(h, e) for h, e, u in zip(etas, errors[k], ok) if u]
        if len(pts) < 2:
            raise Underpowered(f"fewer than two usable eta values for {k}")
        slopes[k] = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    result = OrderStudyResult(etas=[float(e) for e in etas], errors=errors, stderrs=stderrs, used=used,
                              slopes=slopes)
    if sweep_eta:
        x = Polynomial.var(0, 1)
        pi = ou_measure(_frac(beta), order, _frac(sweep_eta))
        target = float(measure_integrate(pi, x * x))
        cfg = SgldConfig(eta=float(sweep_eta), beta=float(beta), steps=sweep_steps, replicas=sweep_replicas,
                         x0=(sweep_x0,), seed=seed + 1)
        stats = sgld_run(LossSpec("centered"), None, cfg, [x * x])
        gap = stats.means[:, 0] - target
        a, r, c = fit_decay(stats.steps, gap, stats.stderrs[:, 0])
        result.sweep_eta = float(sweep_eta)
        result.sweep_steps = [int(k) for k in stats.steps]
        result.sweep_gap = [float(g) for g in gap]
        result.sweep_stderr = [float(s) for s in stats.stderrs[:, 0]]
        result.decay_factor = r
        result.decay_rate = -math.log(r) / sweep_eta
        result.decay_rate_exact = -2 * math.log(1 - sweep_eta) / sweep_eta
    return result


def order_study_outcome(params: dict) -> Outcome:
    try:
        res = run_order_study(**params)
    except Underpowered as exc:
        return Outcome({}, {}, underpowered=True, notes=[str(exc)])
    rows = []
    for i, eta in enumerate(res.etas):
        for k in TEST_FUNCTIONS:
            rows.append((eta, k, res.errors[k][i], res.stderrs[k][i], int(res.used[k][i])))
    tables = {"errors": (["eta", "test_fn", "weak_error", "stderr", "used_in_fit"], rows),
              "slopes": (["test_fn", "fitted_slope"], [(k, v) for k, v in res.slopes.items()])}
    order = params.get("order", 1)
    gates = {"slope_x2": res.slope >= (order + 1) - 0.3 if order else res.slope >= 0.8}
    if params.get("sweep_eta", 0.2):
        tables["decay"] = (["step", "gap", "stderr"],
                           list(zip(res.sweep_steps, res.sweep_gap, res.sweep_stderr)))
        tables["decay_fit"] = (["eta", "decay_factor", "decay_rate", "decay_rate_exact"],
                               [(res.sweep_eta, res.decay_factor, res.decay_rate, res.decay_rate_exact)])
        gates["decay_rate"] = abs(res.decay_rate / res.decay_rate_exact - 1) <= 0.25
    return Outcome(tables, gates)


# ---------------------------------------------------------------------------
# Density comparison
# ---------------------------------------------------------------------------

def run_density_compare(beta=20, eta=0.5, grid_min: float = -1.0, grid_max: float = 1.0, grid_points: int = 201,
                        steps: int = 10000, replicas: int = 10000, bandwidth: float = 0.1, seed: int = 0,
                        compare_window: float = 0.6) -> Outcome:
    """Curves of rho, both first-order conventions, pi^2, the exact discrete law and a KDE."""
    beta_f, eta_f = _frac(beta), _frac(eta)
    grid = np.linspace(grid_min, grid_max, grid_points)
    pi1 = ou_measure(beta_f, 1, eta_f)
    pi1_doubled = ou_measure(beta_f, 1, eta_f, convention="doubled")
    pi2 = ou_measure(beta_f, 2, eta_f)
    rho = pi1.base.pdf(grid)
    if eta_f == 0:
        exact = rho
    else:
        _, var = ou_discrete_law(float(eta_f), float(beta_f), math.inf)
        exact = np.exp(-grid ** 2 / (2 * var)) / math.sqrt(2 * math.pi * var)
    cfg = SgldConfig(eta=float(eta_f), beta=float(beta_f), steps=steps, replicas=replicas, x0=(0.0,), seed=seed)
    stats = sgld_run(LossSpec("centered"), None, cfg)
    kde = kde_smooth(stats.final_samples, bandwidth, grid)
    cols = {
        "x": grid, "rho": rho, "pi1_paper_convention": density(pi1_doubled, grid),
        "pi1_oracle_convention": density(pi1, grid), "pi2": density(pi2, grid),
        "exact_discrete": exact, "kde": kde,
    }
    names = list(cols)
    rows = list(zip(*(cols[n] for n in names)))
    win = np.abs(grid) <= compare_window + 1e-12
    err_pi1 = np.max(np.abs(exact - cols["pi1_oracle_convention"])[win])
    err_rho = np.max(np.abs(exact - rho)[win])
    mass = float(np.trapezoid(kde, grid))
    gates = {"kde_mass": abs(mass - 1) <= 0.01}
    if eta_f > 0:
        gates["pi1_beats_rho"] = bool(err_pi1 < err_rho)
    summary = [("max_abs_err_pi1_oracle", float(err_pi1)), ("max_abs_err_rho", float(err_rho)),
               ("kde_mass", mass)]
    return Outcome({"curves": (names, rows), "summary": (["quantity", "value"], summary)}, gates)


# ---------------------------------------------------------------------------
# Generalization gap and stability
# ---------------------------------------------------------------------------

SLOPE_WINDOW = (-1.3, -0.7)


def run_gen_gap(n_list=(25, 50, 100, 200), var: float = 1.0, mean: float = 0.0, beta: float = 10.0,
                eta: float = 0.1, batch_size: int = 5, steps: int = 200, replicas: int = 20000,
                seed: int = 0, x0: float = 0.0) -> Outcome:
    loss = LossSpec("shifted")
    dist = DataDistribution("gaussian", mean, var)
    cfg = SgldConfig(eta=eta, beta=beta, batch_size=batch_size, steps=steps, replicas=replicas,
                     x0=(x0,), seed=seed)
    rows = generalization_gap_mc(loss, dist, n_list, cfg)
    slope = loglog_slope([r.n for r in rows], [r.gap for r in rows])
    under = any(r.underpowered for r in rows) or not math.isfinite(slope)
    table = [(r.n, r.gap, r.stderr, r.exact) for r in rows]
    gates = {"slope": SLOPE_WINDOW[0] <= slope <= SLOPE_WINDOW[1]} if math.isfinite(slope) else {}
    return Outcome({"gap": (["n", "gap", "stderr", "gibbs_exact"], table),
                    "slope": (["quantity", "value"], [("fitted_slope", slope)])}, gates, underpowered=under)


def run_stability(n_list=(50, 100, 200, 400), order: int = 1, eta=0.1, beta=10, var: float = 1.0,
                  mean: float = 0.0, batch_size: int = 5, seed: int = 0) -> Outcome:
    loss = LossSpec("shifted")
    dist = DataDistribution("gaussian", mean, var)
    rows, slope = stability_sweep(loss, dist, n_list, order, _frac(eta), _frac(beta), batch_size, seed)
    table = [(r.n, r.sup_difference, slope) for r in rows]
    gates = {"slope": SLOPE_WINDOW[0] <= slope <= SLOPE_WINDOW[1]}
    return Outcome({"stability": (["n", "stability_sup", "slope"], table)}, gates)


# ---------------------------------------------------------------------------
# ODE demo and budget
# ---------------------------------------------------------------------------

Y_SQUARED_SERIES = (Fraction(-1), Fraction(3, 2), Fraction(-8, 3), Fraction(31, 6))


def run_ode_demo(rhs: str = "x1^2", order: int = 4, study_orders=(0, 1, 2, 3),
                 etas=(0.01, 0.005, 0.0025, 0.00125), horizon: float = 0.8, curve_eta=1 / 6,
                 curve_horizon: float = 0.84, y0: float = 1.0) -> Outcome:
    from .polycore import parse_polynomial

    f = parse_polynomial(rhs, 1)
    series = modified_coefficients(f, order)
    coef_rows = [(ell, format_polynomial(c)) for ell, c in enumerate(series.coefficients, start=1)]
    gates = {}
    y = Polynomial.var(0, 1)
    if f == y * y:
        expected = [y ** (ell + 2) * c for ell, c in enumerate(Y_SQUARED_SERIES, start=1)]
        gates["series"] = list(series.coefficients[:len(expected)]) == expected[:order]
    study_rows = []
    for N in study_orders:
        st = bea_order_study(f, N, etas, horizon, y0)
        for eta, err in zip(st.etas, st.max_errors):
            study_rows.append((N, eta, err, st.slope))
        gates[f"order_{N}"] = abs(st.slope - (N + 1)) <= 0.4
    curves = curve_data(f, float(curve_eta), list(study_orders), curve_horizon, y0)
    names = list(curves)
    return Outcome({
        "coefficients": (["ell", "coefficient"], coef_rows),
        "order_study": (["N", "eta", "max_error", "fitted_order"], study_rows),
        "curves": (names, list(zip(*(curves[n] for n in names)))),
    }, gates)


def run_budget(eps: float = 0.01, orders=(1, 2, 3), C: float = 1.0, m: float = 0.5, M: float = 1.0) -> Outcome:
    rows = []
    for N in orders:
        b = runtime_budget(eps, N, C, m, M)
        rows.append((N, b.eta, b.n, b.k))
    ks = [r[3] for r in rows]
    gates = {"k_nonincreasing": all(a >= b for a, b in zip(ks, ks[1:]))}
    return Outcome({"budget": (["N", "eta", "n", "k"], rows)}, gates)
