"""Replica Monte Carlo for stochastic gradient Langevin dynamics.

    X_{k+1} = X_k - eta * grad F_{zeta_k}(X_k) + sqrt(2 eta / beta) * xi_k

Replicas are vectorised with numpy. Random numbers come from
:mod:`sgld_bea.rng`, keyed by (seed, replica, step, channel), and all
reductions are accumulated in fixed blocks of replicas so a run split across
workers reproduces the serial result bit for bit.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .polycore import Polynomial

log = logging.getLogger(__name__)

BLOCK = 256
MAX_RECORDS = 512
MAX_ABORT_FRACTION = 1e-3
MOMENT_POWERS = (1, 2, 3)


class DivergenceError(RuntimeError):
    """Too many replicas reached a non-finite state."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class StabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SgldConfig:
    eta: float
    beta: float
    batch_size: int = 1
    steps: int = 1000
    replicas: int = 1000
    x0: Tuple[float, ...] = (0.0,)
    seed: int = 0
    stability: Optional[Tuple[float, float]] = None  # declared (m, M) of the loss

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.replicas < 1:
            raise ValueError("need at least one replica")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.stability is not None and not self.is_stable():
            warnings.warn(
                f"eta={self.eta} is outside the stability envelope 2m/M^2={self.step_bound():.4g}",
                StabilityWarning, stacklevel=3)

    @property
    def dim(self) -> int:
        return len(self.x0)

    def step_bound(self) -> float:
        m, M = self.stability
        return 2 * m / M ** 2

    def is_stable(self) -> bool:
        return self.stability is None or self.eta < self.step_bound()

    def record_steps(self) -> np.ndarray:
        stride = max(1, -(-self.steps // MAX_RECORDS))
        steps = list(range(0, self.steps + 1, stride))
        if steps[-1] != self.steps:
            steps.append(self.steps)
        return np.asarray(steps)


@dataclass
class TrajectoryStats:
    """Replica means and standard errors of registered test functions.

    ``means[r, j]`` estimates E phi_j(X_{steps[r]}). Moments hold E|X|^{2p} for
    p = 1, 2, 3. ``trend`` holds the per-replica least-squares slope of
    |X_k|^{2p} over the final half of the run, averaged over replicas.
    """

    config: SgldConfig
    tests: Tuple[Polynomial, ...]
    steps: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    moment_means: np.ndarray
    moment_stderrs: np.ndarray
    trend_means: np.ndarray
    trend_stderrs: np.ndarray
    alive: np.ndarray
    final_samples: np.ndarray
    aborted: int = 0
    first_abort_step: Optional[int] = None

    def record_index(self, step: Optional[int]) -> int:
        if step is None:
            return len(self.steps) - 1
        hits = np.nonzero(self.steps == step)[0]
        if not len(hits):
            raise KeyError(f"step {step} was not recorded")
        return int(hits[0])

    def to_rows(self) -> List[Tuple[int, str, float, float]]:
        rows = []
        for r, k in enumerate(self.steps):
            for j, phi in enumerate(self.tests):
                rows.append((int(k), str(phi), float(self.means[r, j]), float(self.stderrs[r, j])))
        return rows


def _trend_weights(steps: np.ndarray, horizon: int) -> np.ndarray:
    w = np.zeros(len(steps))
    window = steps >= horizon / 2
    if window.sum() >= 2:
        t = steps[window].astype(float)
        tc = t - t.mean()
        w[window] = tc / np.sum(tc * tc)
    return w


def _block_sums(values: np.ndarray, mask: np.ndarray, offsets: np.ndarray):
    v = np.where(mask[:, None], values, 0.0)
    s1 = np.add.reduceat(v, offsets, axis=0)
    s2 = np.add.reduceat(v * v, offsets, axis=0)
    cnt = np.add.reduceat(mask.astype(np.int64), offsets)
    return s1, s2, cnt


def _simulate(loss, data: Optional[np.ndarray], cfg: SgldConfig, tests: Sequence[Polynomial],
              r0: int, r1: int) -> dict:
    """Run replicas [r0, r1). ``data`` is (n, d) shared or (R, n, d) per replica."""
    d = cfg.dim
    m = r1 - r0
    reps = np.arange(r0, r1, dtype=np.uint64)
    offsets = np.arange(0, m, BLOCK)
    rec = cfg.record_steps()
    rec_index = {int(k): i for i, k in enumerate(rec)}
    weights = _trend_weights(rec, cfg.steps)
    float_tests = [p.to_float() for p in tests]
    nvals = len(tests) + len(MOMENT_POWERS)
    nblk = len(offsets)
    S1 = np.zeros((len(rec), nblk, nvals))
    S2 = np.zeros_like(S1)
    CNT = np.zeros((len(rec), nblk), dtype=np.int64)
    trend = np.zeros((m, len(MOMENT_POWERS)))

    X = np.tile(np.asarray(cfg.x0, dtype=float), (m, 1))
    alive = np.ones(m, dtype=bool)
    abort_step = np.full(m, -1)
    noise_scale = math.sqrt(2.0 * cfg.eta / cfg.beta)
    per_replica_data = data is not None and data.ndim == 3
    if per_replica_data:
        data = data[r0:r1]
    rows = np.arange(m)[:, None]

    def record(step):
        i = rec_index[step]
        sq = np.sum(X * X, axis=1)
        cols = [p(X) if p.dim > 1 else p(X[:, 0]) for p in float_tests]
        cols += [sq ** p for p in MOMENT_POWERS]
        vals = np.column_stack(cols) if cols else np.zeros((m, 0))
        s1, s2, cnt = _block_sums(vals, alive, offsets)
        S1[i], S2[i], CNT[i] = s1, s2, cnt
        if weights[i] != 0.0:
            trend[:] += weights[i] * np.where(alive[:, None], vals[:, len(tests):], 0.0)

    record(0)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.steps):
            if loss.uses_data:
                n = data.shape[-2]
                idx = rng.integers(cfg.seed, reps, t, rng.CHANNEL_BATCH, cfg.batch_size, n)
                zb = data[rows, idx] if per_replica_data else data[idx]
                grad = loss.batch_gradient(X, zb)
            else:
                grad = loss.batch_gradient(X, None)
            xi = rng.normals(cfg.seed, reps, t, rng.CHANNEL_NOISE, d)
            X = X - cfg.eta * grad + noise_scale * xi
            bad = alive & ~np.isfinite(X).all(axis=1)
            if bad.any():
                alive &= ~bad
                abort_step[bad] = t + 1
                X[bad] = 0.0
            if t + 1 in rec_index:
                record(t + 1)

    with np.errstate(over="ignore", invalid="ignore"):
        ts1, ts2, tcnt = _block_sums(trend, alive, offsets)
    return dict(S1=S1, S2=S2, CNT=CNT, T1=ts1, T2=ts2, TCNT=tcnt,
                samples=X[alive].copy(), alive=alive, abort_step=abort_step)


def _mean_stderr(s1, s2, cnt):
    cnt = np.asarray(cnt, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        mean = s1 / cnt
        var = (s2 - s1 * s1 / cnt) / (cnt - 1)
        var = np.where(var > 0, var, 0.0)
        se = np.sqrt(var / cnt)
    se = np.where(cnt > 1, se, np.nan)
    return mean, se


def _chunks(R: int, workers: int) -> List[Tuple[int, int]]:
    nblk = -(-R // BLOCK)
    per = -(-nblk // max(1, workers))
    out = []
    for b in range(0, nblk, per):
        out.append((b * BLOCK, min(R, (b + per) * BLOCK)))
    return out


def run_replicas(loss, data, cfg: SgldConfig, tests: Sequence[Polynomial] = (),
                 workers: int = 1, allow_divergence: bool = False) -> TrajectoryStats:
    """Engine behind :func:`sgld_run`; ``data`` may hold one dataset per replica."""
    tests = tuple(tests)
    for p in tests:
        if p.dim != cfg.dim:
            raise ValueError("test function dimension does not match x0")
    chunks = _chunks(cfg.replicas, workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _simulate(loss, data, cfg, tests, *c), chunks))
    else:
        parts = [_simulate(loss, data, cfg, tests, *c) for c in chunks]

    S1 = np.concatenate([p["S1"] for p in parts], axis=1).sum(axis=1)
    S2 = np.concatenate([p["S2"] for p in parts], axis=1).sum(axis=1)
    CNT = np.concatenate([p["CNT"] for p in parts], axis=1).sum(axis=1)
    T1 = np.concatenate([p["T1"] for p in parts], axis=0).sum(axis=0)
    T2 = np.concatenate([p["T2"] for p in parts], axis=0).sum(axis=0)
    TCNT = np.concatenate([p["TCNT"] for p in parts]).sum()
    alive = np.concatenate([p["alive"] for p in parts])
    abort_step = np.concatenate([p["abort_step"] for p in parts])

    mean, se = _mean_stderr(S1, S2, CNT[:, None])
    tmean, tse = _mean_stderr(T1, T2, TCNT)
    nt = len(tests)
    aborted = int((~alive).sum())
    first = int(abort_step[abort_step >= 0].min()) if aborted else None
    if aborted:
        log.warning("%d of %d replicas diverged (first at step %d)", aborted, cfg.replicas, first)
        if aborted > MAX_ABORT_FRACTION * cfg.replicas and not allow_divergence:
            raise DivergenceError(
                f"{aborted} of {cfg.replicas} replicas reached a non-finite state; first at step {first}",
                first)
    return TrajectoryStats(
        config=cfg, tests=tests, steps=cfg.record_steps(),
        means=mean[:, :nt], stderrs=se[:, :nt],
        moment_means=mean[:, nt:], moment_stderrs=se[:, nt:],
        trend_means=tmean, trend_stderrs=tse,
        alive=CNT, final_samples=np.concatenate([p["samples"] for p in parts]),
        aborted=aborted, first_abort_step=first)


def sgld_run(loss, dataset, cfg: SgldConfig, tests: Sequence[Polynomial] = (),
             workers: int = 1, allow_divergence: bool = False) -> TrajectoryStats:
    """Simulate ``cfg.replicas`` independent SGLD chains on one dataset.

    ``loss`` must provide ``uses_data`` and ``batch_gradient(X, zb)``;
    ``dataset`` exposes ``points`` of shape (n, d) (see :mod:`sgld_bea.learnlab`).
    Raises :class:`DivergenceError` when more than 0.1% of replicas blow up.
    """
    data = None if dataset is None else np.asarray(dataset.points, dtype=float)
    if data is not None:
        if len(data) == 0:
            raise ValueError("dataset is empty")
        if cfg.batch_size > len(data):
            raise ValueError("batch size exceeds dataset size")
    return run_replicas(loss, data, cfg, tests, workers=workers, allow_divergence=allow_divergence)


def estimate_expectation(stats: TrajectoryStats, phi: Polynomial, step: Optional[int] = None):
    """Replica mean and standard error of phi(X_step); defaults to the final step.

    Constant test functions are returned exactly without needing registration.
    """
    i = stats.record_index(step)
    for j, p in enumerate(stats.tests):
        if p == phi:
            return float(stats.means[i, j]), float(stats.stderrs[i, j])
    if phi.degree() <= 0:
        return float(phi.constant_term()), 0.0
    raise KeyError(f"test function {phi} was not registered for this run")


# ---------------------------------------------------------------------------
# Closed-form discrete OU law
# ---------------------------------------------------------------------------

def ou_discrete_law(eta: float, beta: float, k, x0=0.0):
    """Mean and per-coordinate variance of X_k for SGLD on F = |x|^2/2.

    X_k is the state after k updates from X_0 = x0. ``k = math.inf`` returns
    the stationary pair ``(0, 2 / (beta (2 - eta)))``.
    """
    if not 0 < eta < 2:
        raise ValueError("the OU recursion is only stable for 0 < eta < 2")
    if beta <= 0:
        raise ValueError("beta must be positive")
    v = 2.0 / (beta * (2.0 - eta))
    x0 = np.asarray(x0, dtype=float)
    if k == math.inf:
        return np.zeros_like(x0) if x0.ndim else 0.0, v
    contraction = (1.0 - eta) ** k
    mean = contraction * x0
    var = v * (1.0 - contraction ** 2)
    return (mean if mean.ndim else float(mean)), var


def gaussian_raw_moment(mean: float, var: float, p: int) -> float:
    """E[Y^p] for Y ~ N(mean, var)."""
    total = 0.0
    for j in range(0, p + 1, 2):
        total += math.comb(p, j) * mean ** (p - j) * var ** (j // 2) * _dfact(j)
    return total


def _dfact(j):
    r = 1
    for k in range(j - 1, 0, -2):
        r *= k
    return r


# ---------------------------------------------------------------------------
# Moment boundedness and density smoothing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    p: int
    slope: float
    slope_stderr: float
    diverged: bool
    passed: bool
    detail: str = ""


def moment_boundedness_check(stats: TrajectoryStats, p: int, sigmas: float = 3.0) -> MomentReport:
    """Test E|X_k|^{2p} for an upward trend over the final half of the run.

    The slope is the replica average of per-replica least-squares slopes, so
    its standard error uses independent replicas only. The check fails when
    the slope is positive at ``sigmas`` standard errors, or when any replica
    or recorded moment became non-finite.
    """
    if p not in MOMENT_POWERS:
        raise ValueError("p must be 1, 2 or 3")
    slope = float(stats.trend_means[p - 1])
    se = float(stats.trend_stderrs[p - 1])
    moments = stats.moment_means[:, p - 1]
    diverged = stats.aborted > 0 or not np.all(np.isfinite(moments)) or not np.isfinite(slope)
    if diverged:
        return MomentReport(p, slope, se, True, False, "non-finite state or moment")
    if not np.isfinite(se):
        return MomentReport(p, slope, se, False, False, "too few replicas or records for a trend")
    significant = slope > sigmas * se if se > 0 else slope > 0
    detail = f"slope {slope:.3e} +- {se:.3e}"
    return MomentReport(p, slope, se, bool(significant), not significant, detail)


def kde_smooth(samples, bandwidth: float, grid) -> np.ndarray:
    """Gaussian kernel density estimate of 1-D samples evaluated on ``grid``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("kde_smooth supports one-dimensional samples only")
        x = x[:, 0]
    if x.size == 0:
        raise ValueError("no samples to smooth")
    grid = np.asarray(grid, dtype=float)
    out = np.zeros(grid.shape)
    norm = 1.0 / (x.size * bandwidth * math.sqrt(2 * math.pi))
    for start in range(0, x.size, 4096):
        u = (grid[:, None] - x[None, start:start + 4096]) / bandwidth
        out += np.exp(-0.5 * u * u).sum(axis=1)
    return out * norm
