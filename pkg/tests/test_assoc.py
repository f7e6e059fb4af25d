import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gomp.assoc import (
    CHUNK,
    LOG_P_SENTINEL,
    SPEARMAN,
    CandidateScanner,
    anova_assoc,
    pearson_assoc,
    scan_candidates,
)
from gomp.datamodel import CATEGORICAL, Dataset, FeatureColumn, Outcome
from gomp.errors import NoCandidates, UsageError


def _t_tail_by_quadrature(t, df):
    logc = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def dens(u):
        return math.exp(logc - (df + 1) / 2 * math.log1p(u * u / df))

    val, _ = integrate.quad(dens, abs(t), math.inf, epsabs=0, epsrel=1e-13, limit=200)
    return 2 * val


def _cat(codes, levels=None):
    codes = np.asarray(codes, dtype=float)
    return FeatureColumn("c", CATEGORICAL, codes, int(levels or codes.max() + 1))


def test_perfect_correlation_sentinel():
    r = np.array([0.3, -1.2, 2.0, 0.7, -0.4])
    s = pearson_assoc(r, r)
    assert s.log_p == LOG_P_SENTINEL
    assert math.isfinite(s.statistic)


def test_exactly_orthogonal():
    r = np.array([1.0, -1.0, 1.0, -1.0])
    x = np.array([1.0, 1.0, -1.0, -1.0])
    s = pearson_assoc(r, x)
    assert s.statistic == 0.0
    assert s.log_p == 0.0


def test_constant_feature_is_null():
    s = pearson_assoc(np.arange(5.0), np.full(5, 3.0))
    assert s.log_p == 0.0


def test_pearson_matches_t_quadrature():
    rng = np.random.default_rng(12)
    r = rng.standard_normal(12)
    x = 0.6 * r + rng.standard_normal(12)
    s = pearson_assoc(r, x)
    rho = np.corrcoef(r, x)[0, 1]
    t = rho * math.sqrt(10 / (1 - rho**2))
    assert s.statistic == pytest.approx(t, rel=1e-12)
    assert s.log_p == pytest.approx(math.log(_t_tail_by_quadrature(t, 10)), abs=1e-8)
    assert s.df == (1, 10)


def test_spearman_is_pearson_on_ranks():
    rng = np.random.default_rng(1)
    r = rng.standard_normal(20)
    x = np.exp(r) + 0.1 * rng.standard_normal(20)
    s = pearson_assoc(r, x, method=SPEARMAN)
    want = pearson_assoc(stats.rankdata(r), stats.rankdata(x))
    assert s.log_p == pytest.approx(want.log_p, abs=1e-12)
    with pytest.raises(UsageError):
        pearson_assoc(r, x, method="kendall")


def test_anova_null_groups():
    r = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    s = anova_assoc(r, _cat([0, 0, 0, 1, 1, 1]))
    assert s.statistic == pytest.approx(0.0, abs=1e-12)
    assert s.log_p == pytest.approx(0.0, abs=1e-12)


def test_anova_two_groups_is_t_squared():
    rng = np.random.default_rng(2)
    codes = np.array([0] * 7 + [1] * 9)
    r = rng.standard_normal(16) + 0.8 * codes
    s = anova_assoc(r, _cat(codes))
    t, p = stats.ttest_ind(r[codes == 1], r[codes == 0])
    assert s.statistic == pytest.approx(t**2, rel=1e-10)
    assert s.log_p == pytest.approx(math.log(p), abs=1e-10)
    assert s.df == (1, 14)


def test_anova_separated_constant_groups_sentinel():
    codes = np.array([0, 0, 1, 1, 2, 2])
    r = np.array([1.0, 1.0, 5.0, 5.0, -2.0, -2.0])
    assert anova_assoc(r, _cat(codes)).log_p == LOG_P_SENTINEL


def test_anova_matches_scipy():
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 3, 40)
    r = rng.standard_normal(40) + 0.5 * codes
    s = anova_assoc(r, _cat(codes))
    F, p = stats.f_oneway(*[r[codes == k] for k in range(3)])
    assert s.statistic == pytest.approx(F, rel=1e-10)
    assert s.log_p == pytest.approx(math.log(p), abs=1e-10)


def _dataset(X, categorical=None):
    return Dataset.from_arrays(X, Outcome.continuous(np.arange(len(X), dtype=float)), categorical=categorical)


def test_scan_single_candidate():
    rng = np.random.default_rng(0)
    d = _dataset(rng.standard_normal((10, 1)))
    assert scan_candidates(rng.standard_normal(10), d).feature_index == 0


def test_scan_tie_lower_index_wins():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(15)
    X = np.column_stack([rng.standard_normal(15), x, x])
    r = x + 0.5 * rng.standard_normal(15)
    assert scan_candidates(r, _dataset(X)).feature_index == 1
    assert scan_candidates(r, _dataset(X), excluded=[1]).feature_index == 2


def test_scan_equals_serial_argmin():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((40, 100))
    X[:, :10] = rng.integers(0, 3, (40, 10))
    d = _dataset(X, categorical=list(range(10)))
    r = X[:, 50] + X[:, 3] + rng.standard_normal(40)
    per = []
    for j in range(100):
        col = d.column(j)
        s = anova_assoc(r, col, j) if col.kind == CATEGORICAL else pearson_assoc(r, col, j)
        per.append((s.log_p, -abs(s.statistic), j))
    assert scan_candidates(r, d).feature_index == min(per)[2]


def test_scan_no_candidates():
    rng = np.random.default_rng(0)
    d = _dataset(rng.standard_normal((8, 2)))
    with pytest.raises(NoCandidates):
        scan_candidates(rng.standard_normal(8), d, excluded=[0, 1])


def test_scan_thread_count_independent():
    rng = np.random.default_rng(7)
    p = 2 * CHUNK + 300
    X = rng.standard_normal((30, p))
    X[:, -40:] = rng.integers(0, 3, (30, 40))
    d = _dataset(X, categorical=list(range(p - 40, p)))
    r = rng.standard_normal(30)
    one = CandidateScanner(d, workers=1).evaluate(r, excluded=[3, 9])
    four = CandidateScanner(d, workers=4).evaluate(r, excluded=[3, 9])
    for a, b in zip(one, four):
        np.testing.assert_array_equal(a, b)
    assert CandidateScanner(d, workers=1).best(r) == CandidateScanner(d, workers=4).best(r)


def test_scanner_counts_evaluations():
    rng = np.random.default_rng(8)
    d = _dataset(rng.standard_normal((12, 9)))
    sc = CandidateScanner(d)
    sc.best(rng.standard_normal(12), excluded=[0, 1])
    assert sc.evaluations == 7


def test_null_pvalues_uniform():
    rng = np.random.default_rng(2024)
    n = 100
    r = rng.standard_normal(n)
    X = rng.standard_normal((n, 200))
    C = rng.integers(0, 3, (n, 200))
    pc = [math.exp(pearson_assoc(r, X[:, j]).log_p) for j in range(200)]
    pa = [math.exp(anova_assoc(r, _cat(C[:, j], 3)).log_p) for j in range(200)]
    assert stats.kstest(pc, "uniform").pvalue > 0.01
    assert stats.kstest(pa, "uniform").pvalue > 0.01


def test_log_scale_separates_tiny_pvalues():
    # both correlations give p-values below machine epsilon
    rng = np.random.default_rng(9)
    r = rng.standard_normal(400)
    strong = r + 0.01 * rng.standard_normal(400)
    stronger = r + 0.001 * rng.standard_normal(400)
    a = pearson_assoc(r, strong).log_p
    b = pearson_assoc(r, stronger).log_p
    assert math.isfinite(a) and math.isfinite(b)
    assert b < a < math.log(np.finfo(float).eps)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(25)
    x = rng.standard_normal(25) + 0.3 * r
    a = pearson_assoc(r, x).log_p
    b = pearson_assoc(r, c * x).log_p
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 200), st.floats(0, 0.999), st.floats(0, 0.999))
def test_monotone_in_abs_rho(n, rho1, rho2):
    from gomp.assoc import _pearson_from_centered

    def lp(rho):
        # construct vectors with the exact correlation rho
        e1 = np.zeros(n)
        e1[0], e1[1] = 1.0, -1.0
        e2 = np.zeros(n)
        e2[:2] = 1.0
        e2[2] = -2.0
        e1 /= np.linalg.norm(e1)
        e2 /= np.linalg.norm(e2)
        x = rho * e1 + math.sqrt(1 - rho * rho) * e2
        out, _ = _pearson_from_centered(e1, 1.0, x[:, None], np.array([1.0]), n)
        return out[0]

    lo, hi = sorted([rho1, rho2])
    assert lp(hi) <= lp(lo) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_log_p_nonpositive_and_stat_finite(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    r = rng.standard_normal(n)
    s = pearson_assoc(r, rng.standard_normal(n))
    assert s.log_p <= 0 and math.isfinite(s.statistic)
    s = anova_assoc(r, _cat(np.arange(n) % 3, 3))
    assert s.log_p <= 0 and math.isfinite(s.statistic)
