"""Loss families, synthetic data and the statistical quantities built on them.

Two loss families are supported, both polynomial in x so that every Gibbs
or modified-measure integral is exact:

* ``"shifted"``:  f(x, z) = |x - z|^2 / 2
* ``"centered"``: f(x, z) = |x|^2 / 2   (data independent)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .langevin_sim import SgldConfig, run_replicas
from .measures import ModifiedMeasure, measure_integrate, modified_measure
from .opalg import MinibatchSpec
from .polycore import Polynomial

FAMILIES = ("shifted", "centered")


@dataclass(frozen=True)
class DataDistribution:
    """Product distribution of i.i.d. coordinates with given mean and variance."""

    kind: str = "gaussian"  # or "uniform"
    mean: float = 0.0
    var: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.var < 0:
            raise ValueError("variance must be non-negative")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def transform(self, u01: np.ndarray) -> np.ndarray:
        """Map uniforms in (0,1) to samples."""
        if self.kind == "gaussian":
            from scipy.special import ndtri
            return self.mean + self.std * ndtri(u01)
        half = math.sqrt(3 * self.var)
        return self.mean + half * (2 * u01 - 1)

    def sample(self, n: int, seed: int) -> np.ndarray:
        g = np.random.default_rng(seed)
        return self.transform(g.random((n, self.dim)))


@dataclass(frozen=True)
class LossSpec:
    """Per-datum loss with declared regularity constants.

    ``data_radius`` bounds |z| on the data the constants are meant for; it
    enters b, M_1 and M_0 for the shifted family.
    """

    family: str = "shifted"
    dim: int = 1
    data_radius: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported loss family {self.family!r}")

    # declared constants -------------------------------------------------
    @property
    def m(self) -> float:
        return 0.5 if self.family == "shifted" else 1.0

    @property
    def b(self) -> float:
        return 0.5 * self.data_radius ** 2 if self.family == "shifted" else 0.0

    @property
    def M(self) -> float:
        return 1.0

    @property
    def M1(self) -> float:
        return self.data_radius if self.family == "shifted" else 0.0

    @property
    def M0(self) -> float:
        return 0.5 * self.data_radius ** 2 if self.family == "shifted" else 0.0

    @property
    def uses_data(self) -> bool:
        return self.family == "shifted"

    def step_bound(self) -> float:
        return 2 * self.m / self.M ** 2

    # numerics -----------------------------------------------------------
    def value(self, x, z):
        x = np.asarray(x, dtype=float)
        if self.family == "centered":
            return 0.5 * np.sum(x * x, axis=-1)
        diff = x - np.asarray(z, dtype=float)
        return 0.5 * np.sum(diff * diff, axis=-1)

    def grad(self, x, z):
        x = np.asarray(x, dtype=float)
        return x if self.family == "centered" else x - np.asarray(z, dtype=float)

    def batch_gradient(self, X: np.ndarray, zb: Optional[np.ndarray]) -> np.ndarray:
        """Minibatch-average gradient; ``zb`` has shape (replicas, n_b, d)."""
        if self.family == "centered":
            return X
        return X - zb.mean(axis=1)

    # exact polynomials --------------------------------------------------
    def loss_poly(self, z) -> Polynomial:
        xs = [Polynomial.var(i, self.dim) for i in range(self.dim)]
        zs = _exact_vector(z, self.dim)
        if self.family == "centered":
            zs = [Fraction(0)] * self.dim
        out = Polynomial.zero(self.dim)
        for x, zi in zip(xs, zs):
            out = out + (x - zi) ** 2
        return out * Fraction(1, 2)

    def gradient_polys(self, z) -> Tuple[Polynomial, ...]:
        zs = _exact_vector(z, self.dim)
        return tuple(Polynomial.var(i, self.dim) - (0 if self.family == "centered" else zs[i])
                     for i in range(self.dim))

    def population_risk(self, dist: DataDistribution) -> Polynomial:
        """E_z f(x, z) in closed form."""
        if self.family == "centered":
            return self.loss_poly(np.zeros(self.dim))
        mu = Fraction(dist.mean)
        var = Fraction(dist.var)
        return self.loss_poly([mu] * self.dim) + Fraction(self.dim, 2) * var

    def check_assumptions(self, data: Optional[np.ndarray] = None, probes: int = 1000, seed: int = 0) -> dict:
        """Probe dissipativity and the gradient Lipschitz bound at random points."""
        g = np.random.default_rng(seed)
        if data is None or len(data) == 0:
            zs = g.uniform(-self.data_radius, self.data_radius, (probes, self.dim))
        else:
            zs = np.asarray(data, dtype=float)[g.integers(0, len(data), probes)]
        x = g.normal(scale=3.0, size=(probes, self.dim))
        y = g.normal(scale=3.0, size=(probes, self.dim))
        inner = np.sum(x * self.grad(x, zs), axis=1)
        dissip = inner >= self.m * np.sum(x * x, axis=1) - self.b - 1e-12
        lhs = np.linalg.norm(self.grad(x, zs) - self.grad(y, zs), axis=1)
        lip = lhs <= self.M * np.linalg.norm(x - y, axis=1) + 1e-12
        growth = np.linalg.norm(self.grad(x, zs), axis=1) <= self.M * np.linalg.norm(x, axis=1) + self.M1 + 1e-12
        return {"dissipative": bool(dissip.all()), "lipschitz": bool(lip.all()),
                "gradient_growth": bool(growth.all())}


def _exact_vector(z, dim) -> List[Fraction]:
    vals = np.atleast_1d(np.asarray(z, dtype=object)).ravel().tolist()
    if len(vals) != dim:
        raise ValueError("datum has wrong dimension")
    return [v if isinstance(v, Fraction) else Fraction(v) for v in vals]


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    dist: Optional[DataDistribution] = None
    seed: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts) < 1:
            raise ValueError("a dataset needs at least one point")
        object.__setattr__(self, "points", pts)

    @classmethod
    def draw(cls, dist: DataDistribution, n: int, seed: int) -> "Dataset":
        return cls(dist.sample(n, seed), dist, seed)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def replace(self, i: int, zbar) -> "Dataset":
        """Neighbouring dataset with the i-th point swapped for ``zbar``."""
        pts = self.points.copy()
        pts[i] = np.asarray(zbar, dtype=float)
        return Dataset(pts, self.dist, self.seed)

    def head(self, n: int) -> "Dataset":
        return Dataset(self.points[:n], self.dist, self.seed)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.points, other.points]), self.dist, None)

    def radius(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))


def empirical_potential(loss: LossSpec, data: Dataset) -> Polynomial:
    """F_z(x) = (1/n) sum_i f(x, z_i), with exact rational coefficients."""
    d = loss.dim
    if loss.family == "centered":
        return loss.loss_poly(np.zeros(d))
    n = data.n
    sums = [sum((Fraction(v) for v in data.points[:, i]), Fraction(0)) for i in range(d)]
    sq = sum((Fraction(v) ** 2 for v in data.points.ravel()), Fraction(0))
    out = Polynomial.constant(sq / (2 * n), d)
    for i in range(d):
        x = Polynomial.var(i, d)
        out = out + x * x * Fraction(1, 2) - x * (sums[i] / n)
    return out


def minibatch_spec(loss: LossSpec, data: Dataset, batch_size: int) -> MinibatchSpec:
    return MinibatchSpec(tuple(loss.gradient_polys(z) for z in data.points), batch_size)


def modified_measure_for(loss: LossSpec, data: Dataset, beta, order: int, eta, batch_size: int = 1) -> ModifiedMeasure:
    """pi^N_z for the SGLD chain on ``data`` (minibatch noise included)."""
    if loss.family not in FAMILIES:
        raise ValueError("exact integration needs a quadratic loss family")
    F = empirical_potential(loss, data)
    return modified_measure(minibatch_spec(loss, data, batch_size), F, beta, order, eta)


# ---------------------------------------------------------------------------
# Generalization
# ---------------------------------------------------------------------------

def gibbs_generalization_exact(var: float, n: int, beta: float = 1.0, dim: int = 1) -> float:
    """E[rho_z(F) - rho_z(F_z)] for f = |x - z|^2/2; equals dim * var / n for every beta."""
    if n <= 0:
        raise ValueError("n must be positive")
    return dim * var / n


@dataclass(frozen=True)
class GapRow:
    n: int
    gap: float
    stderr: float
    exact: float
    underpowered: bool


def _replica_datasets(dist: DataDistribution, n: int, replicas: int, seed: int) -> np.ndarray:
    u = rng.uniforms(seed, np.arange(replicas), n, rng.CHANNEL_DATA, n * dist.dim)
    return dist.transform(u).reshape(replicas, n, dist.dim)


def generalization_gap_mc(loss: LossSpec, dist: DataDistribution, n_list: Sequence[int],
                          cfg: SgldConfig) -> List[GapRow]:
    """Monte Carlo estimate of E[F(X_k) - F_z(X_k)] for each n.

    Each of the ``cfg.replicas`` chains gets its own freshly drawn dataset, so
    the replica standard error covers both dataset and algorithm randomness.
    The population risk F is evaluated in closed form.
    """
    if loss.family != "shifted":
        raise ValueError("the generalization experiment needs the data-dependent (shifted) family")
    Fpop = loss.population_risk(dist).to_float()
    rows = []
    for n in n_list:
        if cfg.batch_size > n:
            raise ValueError("batch size exceeds n")
        data = _replica_datasets(dist, n, cfg.replicas, cfg.seed)
        stats = run_replicas(loss, data, cfg, ())
        if stats.aborted:
            raise RuntimeError("replicas diverged during the generalization run")
        X = stats.final_samples
        pop = Fpop(X) if loss.dim > 1 else Fpop(X[:, 0])
        emp = np.mean(loss.value(X[:, None, :], data), axis=1)
        g = pop - emp
        gap = float(g.mean())
        se = float(g.std(ddof=1) / math.sqrt(len(g)))
        exact = gibbs_generalization_exact(dist.var, n, cfg.beta, loss.dim)
        rows.append(GapRow(n, gap, se, exact, bool(se > exact)))
    return rows


def loglog_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if np.any(ys <= 0):
        return float("nan")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# ---------------------------------------------------------------------------
# Uniform stability
# ---------------------------------------------------------------------------

def default_probes(dist: DataDistribution, count: int = 32) -> List[float]:
    return list(np.linspace(dist.mean - 4 * dist.std, dist.mean + 4 * dist.std, count))


def uniform_stability_eval(builder: Callable[[Dataset], ModifiedMeasure], loss: LossSpec, data: Dataset,
                           i: int, zbar, probes: Sequence) -> float:
    """max over probe z of |pi_z(f(., z)) - pi_zbar(f(., z))| (a lower bound on the sup).

    The two swapped data points are always added to the probe set.
    """
    if loss.family not in FAMILIES:
        raise ValueError("exact integration needs a quadratic loss family")
    pi_a = builder(data)
    pi_b = builder(data.replace(i, zbar))
    pts = [np.atleast_1d(np.asarray(p, float)) for p in probes]
    pts += [data.points[i], np.atleast_1d(np.asarray(zbar, float))]
    worst = 0.0
    for z in pts:
        f = loss.loss_poly(z)
        diff = measure_integrate(pi_a, f) - measure_integrate(pi_b, f)
        worst = max(worst, abs(float(diff)))
    return worst


@dataclass(frozen=True)
class StabilityRow:
    n: int
    sup_difference: float


def stability_sweep(loss: LossSpec, dist: DataDistribution, n_list: Sequence[int], order: int, eta, beta,
                    batch_size: int = 1, seed: int = 0, shift: Optional[float] = None,
                    probes: Optional[Sequence] = None) -> Tuple[List[StabilityRow], float]:
    """Sup-difference of pi^N over neighbouring datasets as n grows.

    Datasets are nested prefixes of one draw; the first point is swapped for
    ``z_0 + shift`` (default 2 standard deviations). Returns the rows and the
    fitted log-log slope.
    """
    full = Dataset.draw(dist, max(n_list), seed)
    shift = 2 * dist.std if shift is None else shift
    zbar = full.points[0] + shift
    probes = default_probes(dist) if probes is None else probes

    def builder(ds):
        return modified_measure_for(loss, ds, beta, order, eta, min(batch_size, ds.n))

    rows = [StabilityRow(n, uniform_stability_eval(builder, loss, full.head(n), 0, zbar, probes))
            for n in n_list]
    return rows, loglog_slope([r.n for r in rows], [r.sup_difference for r in rows])


# ---------------------------------------------------------------------------
# Runtime budget
# ---------------------------------------------------------------------------

class InfeasibleBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Budget:
    eta: float
    n: int
    k: int


def runtime_budget(eps: float, order: int, C: float = 1.0, m: float = 0.5, M: float = 1.0) -> Budget:
    """Step size, sample size and iteration count reaching generalization error eps.

    eta is the boundary value min(2m/M^2, C eps^{1/N}); n and k are the
    smallest integers with n >= C / (eps (1 - eta)) and
    k >= (C / eps^{1/N}) log(1/eps).
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if order < 1:
        raise ValueError("order must be at least 1")
    root = eps ** (1.0 / order)
    eta = min(2 * m / M ** 2, C * root)
    if eta >= 1:
        raise InfeasibleBudgetError(
            f"step size cap {eta:.4g} >= 1 leaves no valid sample size (C eps^(1/N) = {C * root:.4g})")
    n = math.ceil(C / (eps * (1 - eta)))
    k = math.ceil(C / root * math.log(1 / eps))
    return Budget(eta, n, k)
