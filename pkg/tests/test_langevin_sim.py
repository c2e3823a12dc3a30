import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as sps

from sgld_bea import rng
from sgld_bea.langevin_sim import (
    DivergenceError,
    SgldConfig,
    StabilityWarning,
    estimate_expectation,
    gaussian_raw_moment,
    kde_smooth,
    moment_boundedness_check,
    ou_discrete_law,
    run_replicas,
    sgld_run,
)
from sgld_bea.learnlab import Dataset, DataDistribution, LossSpec
from sgld_bea.polycore import Polynomial

OU = LossSpec("centered")


# -- random streams ---------------------------------------------------------

def test_streams_are_keyed():
    reps = np.arange(100, dtype=np.uint64)
    a = rng.normals(5, reps, 3, rng.CHANNEL_NOISE, 2)
    assert np.array_equal(a, rng.normals(5, reps, 3, rng.CHANNEL_NOISE, 2))
    assert np.array_equal(a[40:60], rng.normals(5, reps[40:60], 3, rng.CHANNEL_NOISE, 2))
    assert not np.array_equal(a, rng.normals(5, reps, 4, rng.CHANNEL_NOISE, 2))
    assert not np.array_equal(a, rng.normals(5, reps, 3, rng.CHANNEL_BATCH, 2))
    assert not np.array_equal(a, rng.normals(6, reps, 3, rng.CHANNEL_NOISE, 2))


def test_normals_are_standard():
    z = rng.normals(1, np.arange(200000), 0, rng.CHANNEL_NOISE, 1)[:, 0]
    assert abs(z.mean()) < 5 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * math.sqrt(2 / z.size)
    assert sps.kstest(z, "norm").pvalue > 1e-3


def test_integers_in_range():
    k = rng.integers(0, np.arange(50000), 0, rng.CHANNEL_BATCH, 3, 7)
    assert k.min() == 0 and k.max() == 6
    counts = np.bincount(k.ravel(), minlength=7)
    assert sps.chisquare(counts).pvalue > 1e-3


# -- engine -----------------------------------------------------------------

def test_worker_split_bit_identical():
    x = Polynomial.var(0, 1)
    data = Dataset.draw(DataDistribution("gaussian", 0.0, 1.0), 20, seed=1)
    cfg = SgldConfig(eta=0.1, beta=5.0, batch_size=3, steps=50, replicas=1500, seed=11)
    runs = [sgld_run(LossSpec("shifted"), data, cfg, [x, x ** 3], workers=w) for w in (1, 2, 5)]
    for other in runs[1:]:
        for name in ("means", "stderrs", "moment_means", "trend_means", "final_samples", "alive"):
            assert np.array_equal(getattr(runs[0], name), getattr(other, name)), name


def test_rerun_identical():
    cfg = SgldConfig(eta=0.2, beta=2.0, steps=30, replicas=300, seed=4)
    a, b = sgld_run(OU, None, cfg), sgld_run(OU, None, cfg)
    assert np.array_equal(a.final_samples, b.final_samples)


def test_discrete_law_matches_recursion():
    eta, beta, x0 = Fraction(3, 10), Fraction(5), Fraction(2)
    m, v = x0, Fraction(0)
    for k in range(1, 15):
        m, v = (1 - eta) * m, (1 - eta) ** 2 * v + 2 * eta / beta
        mean, var = ou_discrete_law(float(eta), float(beta), k, float(x0))
        assert mean == pytest.approx(float(m), rel=1e-12)
        assert var == pytest.approx(float(v), rel=1e-12)
    assert ou_discrete_law(0.5, 20, math.inf) == (0.0, pytest.approx(1 / 15))


def test_transient_law_matches_closed_form():
    x = Polynomial.var(0, 1)
    cfg = SgldConfig(eta=0.3, beta=5.0, steps=12, replicas=20000, x0=(1.5,), seed=2)
    st = sgld_run(OU, None, cfg, [x, x * x])
    for k in (1, 5, 12):
        mean, var = ou_discrete_law(0.3, 5.0, k, 1.5)
        m_hat, m_se = estimate_expectation(st, x, k)
        s_hat, s_se = estimate_expectation(st, x * x, k)
        assert abs(m_hat - mean) < 4 * m_se
        assert abs(s_hat - (var + mean ** 2)) < 4 * s_se


def test_minibatch_gradient_unbiased():
    # one step from x0: E X_1 = x0 - eta (x0 - mean(z)) regardless of batch size
    x = Polynomial.var(0, 1)
    data = Dataset(np.array([[-1.0], [0.5], [2.0], [3.5]]))
    cfg = SgldConfig(eta=0.5, beta=1e6, batch_size=2, steps=1, replicas=1_000_000, x0=(1.0,), seed=9)
    st = sgld_run(LossSpec("shifted"), data, cfg, [x])
    mean, se = estimate_expectation(st, x)
    want = 1.0 - 0.5 * (1.0 - data.points.mean())
    assert abs(mean - want) < 4 * se


def test_expectation_lookup():
    x = Polynomial.var(0, 1)
    st = sgld_run(OU, None, SgldConfig(eta=0.1, beta=1.0, steps=5, replicas=10), [x])
    assert estimate_expectation(st, Polynomial.constant(3, 1)) == (3.0, 0.0)
    with pytest.raises(KeyError):
        estimate_expectation(st, x * x)
    with pytest.raises(KeyError):
        estimate_expectation(st, x, step=100)


def test_record_steps():
    assert list(SgldConfig(eta=0.1, beta=1, steps=5).record_steps()) == [0, 1, 2, 3, 4, 5]
    rec = SgldConfig(eta=0.1, beta=1, steps=10000).record_steps()
    assert rec[0] == 0 and rec[-1] == 10000 and len(rec) <= 513


def test_divergence():
    cfg = SgldConfig(eta=2.5, beta=1.0, steps=2000, replicas=100)
    with pytest.raises(DivergenceError) as err:
        sgld_run(OU, None, cfg)
    assert err.value.step is not None
    st = sgld_run(OU, None, cfg, allow_divergence=True)
    assert st.aborted == 100
    assert moment_boundedness_check(st, 2).diverged


def test_stability_warning():
    with pytest.warns(StabilityWarning):
        SgldConfig(eta=2.5, beta=1.0, stability=(1.0, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SgldConfig(eta=0.5, beta=1.0, stability=(1.0, 1.0))


def test_moment_check_flat_when_stationary():
    cfg = SgldConfig(eta=0.5, beta=2.0, steps=400, replicas=4000, seed=3)
    st = sgld_run(OU, None, cfg)
    for p in (1, 2, 3):
        rep = moment_boundedness_check(st, p)
        assert rep.passed and not rep.diverged


def test_input_validation():
    with pytest.raises(ValueError):
        SgldConfig(eta=-0.1, beta=1.0)
    with pytest.raises(ValueError):
        SgldConfig(eta=0.1, beta=0.0)
    with pytest.raises(ValueError):
        sgld_run(LossSpec("shifted"), Dataset(np.zeros((2, 1))), SgldConfig(eta=0.1, beta=1, batch_size=3))
    with pytest.raises(ValueError):
        run_replicas(OU, None, SgldConfig(eta=0.1, beta=1), [Polynomial.var(0, 2)])


# -- helpers ----------------------------------------------------------------

@pytest.mark.parametrize("p", range(7))
def test_gaussian_raw_moment(p):
    assert gaussian_raw_moment(0.7, 0.3, p) == pytest.approx(sps.norm(0.7, math.sqrt(0.3)).moment(p), rel=1e-12)


def test_kde_matches_scipy():
    x = rng.normals(0, np.arange(3000), 0, rng.CHANNEL_NOISE, 1)[:, 0]
    grid = np.linspace(-4, 4, 81)
    h = 0.3
    ref = sps.gaussian_kde(x, bw_method=h / x.std(ddof=1))(grid)
    np.testing.assert_allclose(kde_smooth(x, h, grid), ref, rtol=1e-10)
    with pytest.raises(ValueError):
        kde_smooth(np.zeros((3, 2)), h, grid)
