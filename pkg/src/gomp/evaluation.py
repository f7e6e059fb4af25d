"""Cross-validation, performance metrics and bootstrap bias correction.

:func:`run_cv` fills an ``n x M`` matrix of out-of-fold predictions, one
column per hyper-parameter configuration. :func:`bbc` turns that matrix into
a performance estimate for the configuration a user would pick, corrected
for the optimism of picking the best of ``M``.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.stats import rankdata

from .datamodel import BINARY, CONTINUOUS, SURVIVAL, Dataset, Outcome, design_matrix, standardize
from .errors import NumericalError, UsageError
from .lasso import DEFAULT_LAMBDA_COUNT, lambda_grid, lasso_path
from .models import DEFAULT_FAMILY, LINEAR, LOGISTIC
from .pursuit import gomp_path
from .stopping import ADJ_R2, LR, StoppingRule, default_grid

AUC = "auc"
MSE = "mse"
C_INDEX = "c-index"
METRIC_FOR = {BINARY: AUC, CONTINUOUS: MSE, SURVIVAL: C_INDEX}
HIGHER_IS_BETTER = {AUC: True, MSE: False, C_INDEX: True}

GOMP = "gomp"
LASSO = "lasso"
REREG_COUNT = 10
# sign-flip tests enumerate every pattern up to this many differences
EXACT_MAX_N = 12


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def kfold_split(n: int, k: int, stratify=None, seed: int = 0) -> np.ndarray:
    """Fold index (0..k-1) for each of ``n`` samples.

    Samples are shuffled and dealt round-robin. With ``stratify`` the deal
    runs through each class in turn, so every fold holds within one sample
    of its share of every class.
    """
    if k < 2:
        raise UsageError("need at least 2 folds")
    if k > n:
        raise UsageError(f"{k} folds for {n} samples")
    rng = np.random.default_rng(seed)
    if stratify is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(stratify)
        if labels.shape != (n,):
            raise UsageError("stratification labels must have one entry per sample")
        order = np.concatenate([rng.permutation(np.nonzero(labels == c)[0]) for c in np.unique(labels)])
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % k
    return folds


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def auc(scores, labels) -> float:
    """Area under the ROC curve by the Mann-Whitney statistic (ties count 1/2)."""
    return float(auc_columns(np.asarray(scores, dtype=float)[:, None], labels)[0])


def auc_columns(S, labels) -> np.ndarray:
    """AUC of every column of ``S`` against the same labels."""
    y = np.asarray(labels, dtype=float)
    pos = y == 1
    n1 = int(pos.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UsageError("AUC needs both classes")
    ranks = rankdata(S, axis=0)
    return (ranks[pos].sum(axis=0) - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def mse(pred, y) -> float:
    d = np.asarray(pred, dtype=float) - np.asarray(y, dtype=float)
    return float(np.mean(d * d))


@numba.njit(cache=True)
def _cindex_counts(R, time, event, weight):
    """Weighted concordant and comparable pair totals for every column of ``R``."""
    n, m = R.shape
    conc = np.zeros(m)
    comp = 0.0
    for i in range(n):
        if event[i] != 1 or weight[i] == 0:
            continue
        for j in range(n):
            if time[i] < time[j] and weight[j] != 0:
                wij = weight[i] * weight[j]
                comp += wij
                for c in range(m):
                    if R[i, c] > R[j, c]:
                        conc[c] += wij
                    elif R[i, c] == R[j, c]:
                        conc[c] += 0.5 * wij
    return conc, comp


def c_index_columns(R, time, event, weight=None) -> np.ndarray:
    R = np.ascontiguousarray(np.asarray(R, dtype=float).reshape(len(time), -1))
    w = np.ones(len(time)) if weight is None else np.asarray(weight, dtype=float)
    conc, comp = _cindex_counts(R, np.asarray(time, float), np.asarray(event, float), w)
    if comp == 0:
        raise UsageError("C-index needs at least one comparable pair")
    return conc / comp


def c_index(risk_scores, time, event) -> float:
    """Harrell's concordance: higher risk should mean an earlier event.

    A pair ``(i, j)`` is comparable when ``time_i < time_j`` and subject
    ``i`` had the event; equal risks count 1/2.
    """
    return float(c_index_columns(np.asarray(risk_scores, float)[:, None], time, event)[0])


def metric_columns(metric: str, P, outcome: Outcome, rows=None, weight=None) -> np.ndarray:
    """Metric of every column of ``P`` on ``rows`` (all rows by default)."""
    P = np.asarray(P, dtype=float)
    if rows is not None:
        P = P[rows]
    if metric == AUC:
        y = outcome.y if rows is None else outcome.y[rows]
        return auc_columns(P, y)
    if metric == MSE:
        y = outcome.y if rows is None else outcome.y[rows]
        d = P - y[:, None]
        return np.mean(d * d, axis=0)
    if metric == C_INDEX:
        t = outcome.time if rows is None else outcome.time[rows]
        e = outcome.event if rows is None else outcome.event[rows]
        return c_index_columns(P, t, e, weight)
    raise UsageError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# Bootstrap bias correction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BbcResult:
    naive_best: float
    corrected: float
    naive_config: int
    redraws: int
    out_of_sample: np.ndarray = field(repr=False)


def _defined(metric, outcome: Outcome, rows) -> bool:
    if rows.size == 0:
        return False
    if metric == AUC:
        y = outcome.y[rows]
        return 0 < y.sum() < y.size
    if metric == C_INDEX:
        t = outcome.time[rows]
        e = outcome.event[rows]
        if not np.any(e == 1):
            return False
        return bool(np.min(t[e == 1]) < np.max(t))
    return True


def bbc_details(P, outcome: Outcome, metric: str, B: int = 1000, seed: int = 0) -> BbcResult:
    """Bootstrap bias-corrected performance of the best configuration.

    Each replicate resamples rows with replacement, picks the configuration
    that scores best on the resampled rows and scores that one on the rows
    left out. A replicate where the metric is undefined on either side is
    redrawn; more than ``10 * B`` redraws in total is an error. Replicate
    ``b`` draws from its own generator seeded by ``(seed, b)``.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] == 0:
        raise UsageError("prediction matrix must be n x M with M >= 1")
    if B < 1:
        raise UsageError("need B >= 1")
    if not np.all(np.isfinite(P)):
        raise UsageError("prediction matrix has missing entries")
    n, m = P.shape
    sign = 1.0 if HIGHER_IS_BETTER[metric] else -1.0
    full = sign * metric_columns(metric, P, outcome)
    naive_cfg = int(np.argmax(full))
    values = np.empty(B)
    redraws = 0
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        while True:
            idx = rng.integers(0, n, size=n)
            inside = np.zeros(n, dtype=bool)
            inside[idx] = True
            out = np.nonzero(~inside)[0]
            if _defined(metric, outcome, idx) and _defined(metric, outcome, out):
                break
            redraws += 1
            if redraws > 10 * B:
                raise NumericalError("too many degenerate bootstrap replicates")
        if metric == C_INDEX:
            counts = np.bincount(idx, minlength=n).astype(float)
            ins = c_index_columns(P, outcome.time, outcome.event, counts)
        else:
            ins = metric_columns(metric, P, outcome, rows=idx)
        best = int(np.argmax(sign * ins))
        values[b] = metric_columns(metric, P[:, [best]], outcome, rows=out)[0]
    return BbcResult(
        naive_best=float(sign * full[naive_cfg]),
        corrected=float(values.mean()),
        naive_config=naive_cfg,
        redraws=redraws,
        out_of_sample=values,
    )


def bbc(P, outcome: Outcome, metric: str, B: int = 1000, seed: int = 0) -> tuple[float, float]:
    """``(naive_best, corrected)``; see :func:`bbc_details`."""
    r = bbc_details(P, outcome, metric, B, seed)
    return r.naive_best, r.corrected


# ---------------------------------------------------------------------------
# Selection quality and paired comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionQuality:
    tpr: float
    fdr: float


def selection_quality(selected, true_set) -> SelectionQuality:
    """True positive rate and false discovery rate of a selected set.

    An empty true set gives ``tpr = 1`` (nothing was missed).
    """
    sel = set(int(j) for j in selected)
    true = set(int(j) for j in true_set)
    tpr = len(sel & true) / len(true) if true else 1.0
    fdr = len(sel - true) / max(len(sel), 1)
    return SelectionQuality(tpr, fdr)


def _sign_patterns(m: int) -> np.ndarray:
    """All 2**m sign vectors as rows."""
    bits = (np.arange(2**m)[:, None] >> np.arange(m)) & 1
    return bits * 2.0 - 1.0


def sign_permutation_test(
    diffs, n_perm: int = 999, n_repeat: int = 1000, seed: int = 0, exact: bool | None = None
) -> float:
    """Two-sided sign-flip permutation p-value of mean(diffs) = 0.

    Random mode averages, over ``n_repeat`` repetitions, the smoothed
    p-value ``(1 + #{|perm mean| >= |observed mean|}) / (n_perm + 1)`` of
    ``n_perm`` random sign vectors. Exact mode enumerates all ``2**len(diffs)``
    sign vectors and returns the fraction at least as extreme. ``exact=None``
    picks exact mode when ``len(diffs) <= EXACT_MAX_N``.
    """
    d = np.asarray(diffs, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise UsageError("need a non-empty vector of paired differences")
    if n_perm < 1 or n_repeat < 1:
        raise UsageError("n_perm and n_repeat must be >= 1")
    if np.all(d == 0):
        return 1.0
    obs = abs(d.mean())
    # relative slack so sign patterns giving the same mean in exact arithmetic tie
    slack = 1e-12 * np.abs(d).sum() / d.size
    if exact is None:
        exact = d.size <= EXACT_MAX_N
    if exact:
        stats = np.abs(_sign_patterns(d.size) @ d) / d.size
        return float(np.count_nonzero(stats >= obs - slack) / stats.size)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_repeat):
        signs = rng.integers(0, 2, size=(n_perm, d.size)) * 2.0 - 1.0
        stats = np.abs(signs @ d) / d.size
        total += (1.0 + np.count_nonzero(stats >= obs - slack)) / (n_perm + 1.0)
    return total / n_repeat


# ---------------------------------------------------------------------------
# Cross-validation pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CvConfig:
    """Hyper-parameter space of one method.

    For ``method="gomp"`` the configurations are the stopping-rule grid,
    times ``rereg_count`` relative penalty values when ``reregularize`` is
    set. For ``method="lasso"`` they are ``lambda_count`` penalty values
    given as fractions of each training fold's lambda_max.
    """

    method: str = GOMP
    family: str | None = None
    residual_kind: str | None = None
    rule_grid: tuple[StoppingRule, ...] = ()
    assoc_method: str = "pearson"
    reregularize: bool = False
    rereg_count: int = REREG_COUNT
    lambda_count: int = DEFAULT_LAMBDA_COUNT
    lambda_ratio: float | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "family": self.family,
            "residual_kind": self.residual_kind,
            "rule_grid": [r.to_dict() for r in self.rule_grid],
            "assoc_method": self.assoc_method,
            "reregularize": self.reregularize,
            "rereg_count": self.rereg_count,
            "lambda_count": self.lambda_count,
            "lambda_ratio": self.lambda_ratio,
        }


def default_rule_grid(family: str) -> tuple[StoppingRule, ...]:
    """Adjusted R^2 gains for the linear family, LR thresholds otherwise."""
    return tuple(default_grid(ADJ_R2 if family == LINEAR else LR))


def resolve_config(d: Dataset, config: CvConfig) -> CvConfig:
    if config.method not in (GOMP, LASSO):
        raise UsageError(f"unknown method {config.method!r}")
    family = config.family or DEFAULT_FAMILY[d.outcome.kind]
    grid = tuple(config.rule_grid) or default_rule_grid(family)
    return replace(config, family=family, rule_grid=grid)


def _ratio(config: CvConfig, n: int, p: int) -> float:
    if config.lambda_ratio is not None:
        return config.lambda_ratio
    return 1e-3 if n > p else 1e-2


def config_labels(config: CvConfig) -> list[dict]:
    if config.method == LASSO:
        return [{"lambda_index": i} for i in range(config.lambda_count)]
    out = []
    for g, rule in enumerate(config.rule_grid):
        if config.reregularize:
            for l in range(config.rereg_count):
                out.append({"rule": rule.to_dict(), "rule_index": g, "lambda_index": l})
        else:
            out.append({"rule": rule.to_dict(), "rule_index": g})
    return out


def _response(family: str, eta, record):
    """Out-of-fold prediction on the scale the metric expects."""
    if family == LINEAR:
        return record.inverse_outcome(eta)
    if family == LOGISTIC:
        return 1.0 / (1.0 + np.exp(-eta))
    return eta


def _path_predictions(path, Z, family, record, count):
    """Predictions at every path point, repeating the last one past a truncation."""
    cols = []
    for k in range(count):
        kk = min(k, len(path.lambdas) - 1)
        cols.append(_response(family, path.linear_predictor(Z, kk), record))
    return cols


def _null_prediction(family, dtr, n_test, record):
    if family == LINEAR:
        return record.inverse_outcome(np.full(n_test, dtr.outcome.y.mean()))
    if family == LOGISTIC:
        return np.full(n_test, dtr.outcome.y.mean())
    return np.zeros(n_test)


@dataclass(frozen=True)
class FoldResult:
    predictions: np.ndarray  # n_test x M
    selected: list
    flagged: bool = False
    message: str = ""


def _run_fold(d: Dataset, config: CvConfig, train, test, workers=1) -> FoldResult:
    family = config.family
    labels_count = len(config_labels(config))
    dtr, record = standardize(d.take(train))
    dte = record.apply(d.take(test))
    n_test = len(test)
    try:
        if config.method == LASSO:
            fr = lambda_grid(1.0, dtr.n, dtr.p, config.lambda_count, _ratio(config, dtr.n, dtr.p))
            lam_max = lasso_path(dtr, count=1).lambda_max
            if lam_max <= 0:
                preds = [_null_prediction(family, dtr, n_test, record)] * labels_count
                return FoldResult(np.column_stack(preds), [[] for _ in range(labels_count)])
            path = lasso_path(dtr, lambdas=lam_max * fr)
            Z, _ = design_matrix(dte, range(dte.p))
            Z = Z * np.asarray(dtr.candidate_mask, bool)[path.owner]
            preds = _path_predictions(path, Z, family, record, labels_count)
            sel = [path.support(min(k, len(path.lambdas) - 1)) for k in range(labels_count)]
            return FoldResult(np.column_stack(preds), sel)
        results = gomp_path(
            dtr, family, config.residual_kind, list(config.rule_grid), config.assoc_method, workers
        )
        preds, sel = [], []
        # stricter rules often stop at the same set; fit each distinct set once
        cache = {}
        for res in results:
            S = list(res.selected)
            key = tuple(S)
            if key in cache:
                p_cols, s_cols = cache[key]
                preds.extend(p_cols)
                sel.extend(s_cols)
                continue
            start = len(preds)
            if not config.reregularize:
                Z, _ = design_matrix(dte, S)
                eta = res.final_model.linear_predictor(Z)
                preds.append(_response(family, eta, record))
                sel.append(S)
                cache[key] = (preds[start:], sel[start:])
                continue
            if not S:
                preds.extend([_null_prediction(family, dtr, n_test, record)] * config.rereg_count)
                sel.extend([[] for _ in range(config.rereg_count)])
                cache[key] = (preds[start:], sel[start:])
                continue
            sub = dtr.select_features(S)
            fr = lambda_grid(1.0, sub.n, sub.p, config.rereg_count, _ratio(config, sub.n, sub.p))
            lam_max = lasso_path(sub, count=1).lambda_max
            path = lasso_path(sub, lambdas=max(lam_max, 1e-12) * fr)
            Z, _ = design_matrix(dte.select_features(S), range(len(S)))
            preds.extend(_path_predictions(path, Z, family, record, config.rereg_count))
            for k in range(config.rereg_count):
                kk = min(k, len(path.lambdas) - 1)
                sel.append([S[j] for j in path.support(kk)])
            cache[key] = (preds[start:], sel[start:])
        return FoldResult(np.column_stack(preds), sel)
    except NumericalError as exc:
        nan = np.full((n_test, labels_count), np.nan)
        return FoldResult(nan, [[] for _ in range(labels_count)], True, str(exc))


@dataclass(frozen=True)
class CvReport:
    """Out-of-fold predictions and the resulting performance estimates."""

    fold_assignments: np.ndarray
    predictions: np.ndarray
    config_labels: list
    metric: str
    per_config_metric: np.ndarray
    best_config: int
    naive_best_metric: float
    bbc_metric: float
    selected_feature_sets: list
    flagged_folds: list
    bbc_redraws: int
    config: CvConfig
    seed: int
    bbc_iters: int

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "folds": int(self.fold_assignments.max()) + 1,
            "fold_assignments": [int(v) for v in self.fold_assignments],
            "config": self.config.to_dict(),
            "config_labels": self.config_labels,
            "per_config_metric": [_jnum(v) for v in self.per_config_metric],
            "best_config": self.best_config,
            "naive_best_metric": _jnum(self.naive_best_metric),
            "bbc_metric": _jnum(self.bbc_metric),
            "bbc_iters": self.bbc_iters,
            "bbc_redraws": self.bbc_redraws,
            "selected_set_sizes": [[len(s) for s in fold] for fold in self.selected_feature_sets],
            "selected_feature_sets": self.selected_feature_sets,
            "flagged_folds": self.flagged_folds,
            "seed": self.seed,
        }


def _jnum(v):
    v = float(v)
    return None if math.isnan(v) else v


def stratify_labels(outcome: Outcome):
    if outcome.kind == BINARY:
        return outcome.y
    if outcome.kind == SURVIVAL:
        return outcome.event
    return None


def run_cv(
    d: Dataset,
    config: CvConfig,
    k: int = 10,
    seed: int = 0,
    stratify: bool = True,
    bbc_iters: int = 1000,
    workers: int = 1,
) -> CvReport:
    """K-fold cross-validation of one method over its configuration grid.

    Every fold standardizes on its training rows only, runs the method and
    predicts its test rows. Folds run on ``workers`` threads and are
    assembled in fold order, so the report does not depend on ``workers``.
    """
    config = resolve_config(d, config)
    folds = kfold_split(d.n, k, stratify_labels(d.outcome) if stratify else None, seed)
    labels = config_labels(config)
    M = len(labels)
    jobs = [(np.nonzero(folds != f)[0], np.nonzero(folds == f)[0]) for f in range(k)]

    def work(job):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return _run_fold(d, config, *job)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    P = np.full((d.n, M), np.nan)
    flagged = []
    selected = []
    for f, ((_, test), res) in enumerate(zip(jobs, results)):
        P[test] = res.predictions
        selected.append(res.selected)
        if res.flagged:
            flagged.append({"fold": f, "reason": res.message})
            warnings.warn(f"fold {f} skipped: {res.message}", RuntimeWarning, stacklevel=2)
    metric = METRIC_FOR[d.outcome.kind]
    rows = np.nonzero(np.all(np.isfinite(P), axis=1))[0]
    if rows.size == 0:
        raise NumericalError("every fold failed")
    sub_outcome = d.outcome.take(rows)
    per = metric_columns(metric, P[rows], sub_outcome)
    sign = 1.0 if HIGHER_IS_BETTER[metric] else -1.0
    best = int(np.argmax(sign * per))
    if bbc_iters > 0:
        res = bbc_details(P[rows], sub_outcome, metric, bbc_iters, seed)
        corrected, redraws = res.corrected, res.redraws
    else:
        corrected, redraws = math.nan, 0
    return CvReport(
        fold_assignments=folds,
        predictions=P,
        config_labels=labels,
        metric=metric,
        per_config_metric=per,
        best_config=best,
        naive_best_metric=float(per[best]),
        bbc_metric=corrected,
        selected_feature_sets=selected,
        flagged_folds=flagged,
        bbc_redraws=redraws,
        config=config,
        seed=seed,
        bbc_iters=bbc_iters,
    )


def write_prediction_matrix(report: CvReport, path) -> None:
    """Dump the out-of-fold prediction matrix as CSV (one column per configuration)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold"] + [f"config_{i}" for i in range(report.predictions.shape[1])])
        for f, row in zip(report.fold_assignments, report.predictions):
            w.writerow([int(f)] + ["" if math.isnan(v) else repr(float(v)) for v in row])


def refit_selection(d: Dataset, report: CvReport, workers: int = 1) -> list[int]:
    """Features chosen by the best cross-validated configuration, refit on all rows."""
    config = report.config
    label = report.config_labels[report.best_config]
    ds, _ = standardize(d)
    if config.method == LASSO:
        fr = lambda_grid(1.0, ds.n, ds.p, config.lambda_count, _ratio(config, ds.n, ds.p))
        lam_max = lasso_path(ds, count=1).lambda_max
        if lam_max <= 0:
            return []
        path = lasso_path(ds, lambdas=lam_max * fr)
        return path.support(min(label["lambda_index"], len(path.lambdas) - 1))
    rule = config.rule_grid[label["rule_index"]]
    res = gomp_path(ds, config.family, config.residual_kind, [rule], config.assoc_method, workers)[0]
    S = list(res.selected)
    if not config.reregularize or not S:
        return S
    sub = ds.select_features(S)
    fr = lambda_grid(1.0, sub.n, sub.p, config.rereg_count, _ratio(config, sub.n, sub.p))
    lam_max = lasso_path(sub, count=1).lambda_max
    path = lasso_path(sub, lambdas=max(lam_max, 1e-12) * fr)
    return sorted(S[j] for j in path.support(min(label["lambda_index"], len(path.lambdas) - 1)))
