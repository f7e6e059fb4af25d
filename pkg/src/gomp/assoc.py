"""Residual-feature association tests on a common log p-value scale.

Continuous features are tested with the Pearson correlation (t reference
distribution, or Spearman via ranks); categorical features with one-way
ANOVA. Converting every statistic to a natural-log p-value makes tests with
different degrees of freedom comparable, and working in log space keeps
extremely significant features distinguishable.

An exactly perfect association gets :data:`LOG_P_SENTINEL`. Candidates are
ordered by ``(log_p, -|statistic|, index)``, with scores equal up to
rounding noise treated as ties, so that even sentinel ties resolve the same
way every time.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .datamodel import CATEGORICAL, Dataset, FeatureColumn
from .errors import NoCandidates, UsageError
from .models import ResidualVector
from .special import log_f_sf, log_t_two_sided

LOG_P_SENTINEL = -math.inf
PEARSON = "pearson"
SPEARMAN = "spearman"
CHUNK = 2048
TIE_RTOL = 1e-11

# 1 - rho^2 at or below this counts as a perfect correlation
_PERFECT = 8 * np.finfo(float).eps
_ZERO_REL = 1e-13


@dataclass(frozen=True)
class AssocScore:
    feature_index: int
    log_p: float
    statistic: float
    df: tuple[int, int]

    @property
    def key(self):
        return (self.log_p, -abs(self.statistic), self.feature_index)


def _values(r):
    return np.asarray(r.values if isinstance(r, ResidualVector) else r, dtype=float)


def _pearson_from_centered(rc, rnorm, Xc, xnorm, n):
    """log p-values and t statistics for centered residuals vs centered columns."""
    k = Xc.shape[1]
    log_p = np.zeros(k)
    stat = np.zeros(k)
    ok = (xnorm > 0) & (rnorm > 0)
    if n < 3 or not np.any(ok):
        return log_p, stat
    rho = (Xc[:, ok].T @ rc) / (xnorm[ok] * rnorm)
    rho = np.clip(rho, -1.0, 1.0)
    one_minus = np.maximum(1.0 - rho * rho, _PERFECT)
    t = rho * np.sqrt((n - 2) / one_minus)
    lp = log_t_two_sided(t, n - 2)
    lp = np.where(1.0 - rho * rho <= _PERFECT, LOG_P_SENTINEL, np.minimum(lp, 0.0))
    log_p[ok] = lp
    stat[ok] = t
    return log_p, stat


def _center(x):
    xc = x - x.mean(axis=0)
    norm = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    # numerically constant columns
    scale = np.sqrt(np.einsum("ij,ij->j", x, x))
    norm = np.where(norm <= 1e-12 * np.maximum(scale, 1.0), 0.0, norm)
    return xc, norm


def _anova_block(r, C, levels):
    """One-way ANOVA of ``r`` across each column of level codes ``C``."""
    n, q = C.shape
    log_p = np.zeros(q)
    stat = np.zeros(q)
    if q == 0:
        return log_p, stat, np.zeros(q, int)
    L = int(levels.max())
    counts = np.zeros((L, q))
    sums = np.zeros((L, q))
    for lev in range(L):
        M = (C == lev).astype(float)
        counts[lev] = M.sum(axis=0)
        sums[lev] = M.T @ r
    k = (counts > 0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / counts, 0.0)
    grand = r.mean()
    between = np.sum(counts * (means - grand) ** 2, axis=0)
    fitted = np.take_along_axis(means, C.astype(int), axis=0)
    dev = r[:, None] - fitted
    within = np.einsum("ij,ij->j", dev, dev)
    total = float(np.sum((r - grand) ** 2))
    d1 = k - 1
    d2 = n - k
    testable = (d1 >= 1) & (d2 >= 1) & (total > 0)
    zero_within = within <= _ZERO_REL * total
    perfect = testable & zero_within & (between > _ZERO_REL * total)
    regular = testable & ~zero_within & (between > 0)
    if np.any(regular):
        F = (between[regular] / d1[regular]) / (within[regular] / d2[regular])
        stat[regular] = F
        log_p[regular] = np.minimum(log_f_sf(F, d1[regular], d2[regular]), 0.0)
    if np.any(perfect):
        log_p[perfect] = LOG_P_SENTINEL
        stat[perfect] = np.finfo(float).max
    return log_p, stat, np.where(testable, d1, 0)


def pearson_assoc(r, x, index: int = 0, method: str = PEARSON) -> AssocScore:
    """Correlation test between residuals and one continuous feature."""
    rv = _values(r)
    xv = np.asarray(x.values if isinstance(x, FeatureColumn) else x, dtype=float)
    if method == SPEARMAN:
        rv, xv = rankdata(rv), rankdata(xv)
    elif method != PEARSON:
        raise UsageError(f"unknown correlation method {method!r}")
    n = len(rv)
    rc, rn = _center(rv[:, None])
    xc, xn = _center(xv[:, None])
    lp, st = _pearson_from_centered(rc[:, 0], rn[0], xc, xn, n)
    return AssocScore(index, float(lp[0]), float(st[0]), (1, n - 2))


def anova_assoc(r, x: FeatureColumn, index: int = 0) -> AssocScore:
    """One-way ANOVA F test of residuals grouped by a categorical feature."""
    rv = _values(r)
    codes = np.asarray(x.values, dtype=float)[:, None]
    lp, st, d1 = _anova_block(rv, codes, np.array([x.level_count]))
    n = len(rv)
    k = int(d1[0]) + 1
    return AssocScore(index, float(lp[0]), float(st[0]), (k - 1, n - k))


def _pick(idx, lp, st) -> int:
    """Position of the best candidate by ``(log_p, -|statistic|, index)``.

    Scores that agree to within ``TIE_RTOL`` count as equal: a matrix
    product may round identical columns differently depending on their
    position in memory.
    """
    best = lp.min()
    near = lp <= best + TIE_RTOL * max(1.0, abs(best)) if np.isfinite(best) else lp == best
    a = np.abs(st)
    top = a[near].max()
    near &= a >= top - TIE_RTOL * max(1.0, top)
    return int(np.flatnonzero(near)[np.argmin(idx[near])])


class CandidateScanner:
    """Prepared candidate set for repeated scans against changing residuals.

    Column centering (and ranking, for Spearman) happens once. Continuous
    candidates are processed in fixed-size chunks so that every column's
    statistic is computed by exactly the same operations whatever the
    number of worker threads.

    ``evaluations`` counts association evaluations across all scans.
    """

    def __init__(self, d: Dataset, method: str = PEARSON, workers: int = 1):
        if method not in (PEARSON, SPEARMAN):
            raise UsageError(f"unknown correlation method {method!r}")
        self.d = d
        self.method = method
        self.workers = max(1, int(workers))
        self.n = d.n
        cat = d.is_categorical
        base = np.asarray(d.candidate_mask, dtype=bool).copy()
        self.cont_idx = np.nonzero(~cat)[0]
        self.cat_idx = np.nonzero(cat)[0]
        Xcont = d.X[:, self.cont_idx]
        if method == SPEARMAN and Xcont.size:
            Xcont = rankdata(Xcont, axis=0)
        self.Xc, self.xnorm = _center(Xcont) if Xcont.size else (Xcont, np.zeros(0))
        base[self.cont_idx[self.xnorm == 0]] = False
        self.C = d.X[:, self.cat_idx]
        self.levels = d.level_counts[self.cat_idx]
        if self.cat_idx.size:
            present = np.array([np.unique(self.C[:, j]).size for j in range(self.cat_idx.size)])
            base[self.cat_idx[present < 2]] = False
        self.base_mask = base
        self.evaluations = 0
        self.scans = 0

    def _chunks(self, allowed):
        out = []
        cont_ok = allowed[self.cont_idx]
        for s in range(0, self.cont_idx.size, CHUNK):
            sel = np.nonzero(cont_ok[s : s + CHUNK])[0] + s
            if sel.size:
                out.append(("cont", sel))
        cat_ok = allowed[self.cat_idx]
        for s in range(0, self.cat_idx.size, CHUNK):
            sel = np.nonzero(cat_ok[s : s + CHUNK])[0] + s
            if sel.size:
                out.append(("cat", sel))
        return out

    def _eval_chunk(self, job, r, rc, rnorm):
        kind, sel = job
        if kind == "cont":
            lp, st = _pearson_from_centered(rc, rnorm, self.Xc[:, sel], self.xnorm[sel], self.n)
            idx = self.cont_idx[sel]
        else:
            lp, st, _ = _anova_block(r, self.C[:, sel], self.levels[sel])
            idx = self.cat_idx[sel]
        return idx, lp, st

    def evaluate(self, r, excluded=()):
        """All candidate scores as arrays ``(indices, log_p, statistic)``."""
        rv = _values(r)
        allowed = self.base_mask.copy()
        allowed[list(excluded)] = False
        rr = rankdata(rv) if self.method == SPEARMAN else rv
        rc = rr - rr.mean()
        rnorm = float(np.sqrt(rc @ rc))
        if rnorm <= 1e-300:
            rnorm = 0.0
        jobs = self._chunks(allowed)
        if self.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(lambda j: self._eval_chunk(j, rv, rc, rnorm), jobs))
        else:
            parts = [self._eval_chunk(j, rv, rc, rnorm) for j in jobs]
        if not parts:
            return np.zeros(0, int), np.zeros(0), np.zeros(0)
        idx = np.concatenate([p[0] for p in parts])
        lp = np.concatenate([p[1] for p in parts])
        st = np.concatenate([p[2] for p in parts])
        self.evaluations += idx.size
        return idx, lp, st

    def best(self, r, excluded=()) -> AssocScore:
        """Strongest association among the allowed candidates."""
        idx, lp, st = self.evaluate(r, excluded)
        self.scans += 1
        if idx.size == 0:
            raise NoCandidates("no candidate features remain")
        i = _pick(idx, lp, st)
        j = int(idx[i])
        if self.d.kinds[j] == CATEGORICAL:
            k = int(np.unique(self.d.X[:, j]).size)
            df = (k - 1, self.n - k)
        else:
            df = (1, self.n - 2)
        return AssocScore(j, float(lp[i]), float(st[i]), df)


def scan_candidates(r, d: Dataset, excluded=(), method: str = PEARSON, workers: int = 1) -> AssocScore:
    """Best candidate feature for residuals ``r``, skipping ``excluded`` indices.

    Raises :class:`NoCandidates` when nothing is left to test.
    """
    return CandidateScanner(d, method=method, workers=workers).best(r, excluded)
