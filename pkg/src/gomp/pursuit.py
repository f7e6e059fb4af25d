"""Greedy forward selection: classic OMP and its generalized form.

:func:`gomp_select` pairs a model family, a residual kind, an association
test and a stopping rule. Each iteration scans all remaining candidates
against the current residuals, adds the strongest one, refits and asks the
stopping rule whether the addition was worth it. A candidate that fails a
comparative rule (LR, adjusted R^2, BIC) is not kept: the returned set holds
only features that passed.

Every run reports two work counters, ``model_fits`` and
``assoc_evaluations``. Callers may register listeners with
:func:`add_run_listener` to observe every finished run.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assoc import PEARSON, CandidateScanner
from .datamodel import CONTINUOUS, Dataset, design_matrix, standardize
from .errors import NoCandidates, NumericalError, UsageError
from .models import (
    DEFAULT_FAMILY,
    LINEAR,
    FittedModel,
    check_compatible,
    fit_linear,
    log_likelihood_ratio,
    residuals,
)
from .stopping import (
    LR,
    MAX_FEATURES,
    RESIDUAL_NORM,
    StoppingRule,
    admits_more,
    bic,
    improves,
    residual_sq_norm,
)

CRITERION = "criterion"
MAX_REACHED = "max-features"
EXHAUSTED = "exhausted"
SATURATED = "saturated"
FIT_FAILED = "fit-failed"

DEFAULT_RULE = StoppingRule(LR, 3.841458820694124)

_RUN_LISTENERS: list[Callable] = []


def add_run_listener(fn: Callable) -> None:
    """Call ``fn(result)`` after every finished selection run."""
    _RUN_LISTENERS.append(fn)


def remove_run_listener(fn: Callable) -> None:
    if fn in _RUN_LISTENERS:
        _RUN_LISTENERS.remove(fn)


def _notify(result):
    for fn in list(_RUN_LISTENERS):
        fn(result)
    return result


@dataclass(frozen=True)
class Step:
    """One selection iteration.

    ``log_p`` is the natural-log association p-value (NaN in classic mode,
    where ``statistic`` is the inner product with the residuals instead).
    ``residual_norm`` is the squared residual norm after the step.
    """

    feature_index: int
    log_p: float
    statistic: float
    lr_statistic: float
    bic: float
    residual_norm: float
    added_df: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "feature_index": self.feature_index,
            "log10_p": None if math.isnan(self.log_p) else _num(self.log_p / math.log(10.0)),
            "statistic": _num(self.statistic),
            "lr_statistic": _num(self.lr_statistic),
            "bic": _num(self.bic),
            "residual_norm": _num(self.residual_norm),
            "added_df": self.added_df,
            "converged": self.converged,
        }


def _num(v):
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class _Event:
    kind: str  # "accept", "alias" or "reject"
    feature: int
    evaluations: int


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one selection run.

    ``models[k]`` is the model after ``k`` accepted steps, so ``models[0]`` is
    the empty-set model and ``models[-1]`` equals ``final_model``.
    ``rejected`` is the trial step that failed the stopping rule, if any.
    """

    selected: tuple[int, ...]
    steps: tuple[Step, ...]
    final_model: FittedModel
    stop_reason: str
    config_fingerprint: str
    family: str
    residual_kind: str
    rule: StoppingRule | None
    assoc_method: str
    initial_residual_norm: float
    model_fits: int
    assoc_evaluations: int
    aliased: tuple[int, ...] = ()
    rejected: Step | None = None
    models: tuple[FittedModel, ...] = field(default=(), repr=False)
    events: tuple[_Event, ...] = field(default=(), repr=False)
    mode: str = "gomp"
    n_features: int = 0

    @property
    def iterations(self) -> int:
        """Selection iterations performed (accepted, aliased and rejected)."""
        return len(self.events)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "selected": list(self.selected),
            "steps": [s.to_dict() for s in self.steps],
            "stop_reason": self.stop_reason,
            "rejected_step": self.rejected.to_dict() if self.rejected else None,
            "aliased": list(self.aliased),
            "family": self.family,
            "residual_kind": self.residual_kind,
            "assoc_method": self.assoc_method,
            "rule": self.rule.to_dict() if self.rule else None,
            "initial_residual_norm": _num(self.initial_residual_norm),
            "final_model": {
                "coefficients": [_num(c) for c in self.final_model.coefficients],
                "log_likelihood": _num(self.final_model.log_likelihood),
                "df": self.final_model.df,
                "converged": self.final_model.converged,
            },
            "model_fits": self.model_fits,
            "assoc_evaluations": self.assoc_evaluations,
            "n_features": self.n_features,
            "config_fingerprint": self.config_fingerprint,
        }


def fingerprint(params: dict) -> str:
    """Short stable hash of a JSON-serializable hyper-parameter mapping."""
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _saturation_cap(d: Dataset) -> int:
    # running out of features is reported separately as exhaustion
    return max(0, d.n - 2)


# ---------------------------------------------------------------------------
# Classic OMP
# ---------------------------------------------------------------------------


def omp_classic(d: Dataset, epsilon: float, max_features: int | None = None) -> SelectionResult:
    """Orthogonal matching pursuit with a squared residual-norm stop.

    Features and outcome are standardized first (centered, unit norm). Each
    step picks the feature with the largest absolute inner product with the
    residuals (lowest index on ties) and refits least squares on all
    selected features.
    """
    if not epsilon > 0:
        raise UsageError("epsilon must be > 0")
    if d.outcome.kind != CONTINUOUS:
        raise UsageError("classic OMP needs a continuous outcome")
    if np.any(d.is_categorical):
        raise UsageError("classic OMP handles continuous features only")
    ds, _ = standardize(d)
    X = ds.X
    y = ds.outcome.y
    allowed = np.asarray(ds.candidate_mask, dtype=bool).copy()
    cap = _saturation_cap(ds)
    if max_features is not None:
        cap = min(cap, max_features)

    model = fit_linear(np.empty((ds.n, 0)), y)
    fits = 1
    evaluations = 0
    r = y - model.fitted_values
    norm0 = float(r @ r)
    selected: list[int] = []
    steps: list[Step] = []
    models = [model]
    events: list[_Event] = []
    aliased: list[int] = []
    reason = EXHAUSTED
    while True:
        rn = float(r @ r)
        if rn <= epsilon:
            reason = CRITERION
            break
        if len(selected) >= cap:
            reason = MAX_REACHED if max_features is not None and cap == max_features else SATURATED
            break
        cand = np.nonzero(allowed)[0]
        if cand.size == 0:
            reason = EXHAUSTED
            break
        inner = X[:, cand].T @ r
        evaluations += cand.size
        i = int(np.argmax(np.abs(inner)))
        j = int(cand[i])
        allowed[j] = False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            trial = fit_linear(X[:, selected + [j]], y)
        fits += 1
        if trial.dropped:
            aliased.append(j)
            events.append(_Event("alias", j, cand.size))
            continue
        lr = log_likelihood_ratio(trial, model)
        model = trial
        selected.append(j)
        r = y - model.fitted_values
        models.append(model)
        events.append(_Event("accept", j, cand.size))
        steps.append(
            Step(j, math.nan, float(inner[i]), lr, bic(model, ds.n), float(r @ r), 1, True)
        )
    params = {"mode": "omp-classic", "epsilon": epsilon, "max_features": max_features}
    return _notify(
        SelectionResult(
            selected=tuple(selected),
            steps=tuple(steps),
            final_model=model,
            stop_reason=reason,
            config_fingerprint=fingerprint(params),
            family=LINEAR,
            residual_kind="raw",
            rule=StoppingRule(RESIDUAL_NORM, epsilon, max_features),
            assoc_method="inner-product",
            initial_residual_norm=norm0,
            model_fits=fits,
            assoc_evaluations=evaluations,
            aliased=tuple(aliased),
            models=tuple(models),
            events=tuple(events),
            mode="omp-classic",
            n_features=ds.p,
        )
    )


# ---------------------------------------------------------------------------
# Generalized OMP
# ---------------------------------------------------------------------------


def _resolve(d: Dataset, family, residual_kind):
    family = family or DEFAULT_FAMILY[d.outcome.kind]
    fam = check_compatible(family, d.outcome.kind, residual_kind)
    return fam, residual_kind or fam.default_residual


def gomp_config(family, residual_kind, rule, assoc_method, fit_options=None) -> dict:
    return {
        "mode": "gomp",
        "family": family,
        "residual_kind": residual_kind,
        "rule": rule.to_dict(),
        "assoc_method": assoc_method,
        "fit_options": dict(sorted((fit_options or {}).items())),
    }


def gomp_select(
    d: Dataset,
    family: str | None = None,
    residual_kind: str | None = None,
    rule: StoppingRule = DEFAULT_RULE,
    assoc_method: str = PEARSON,
    workers: int = 1,
    fit_options: dict | None = None,
    scanner: CandidateScanner | None = None,
) -> SelectionResult:
    """Generalized OMP selection.

    Parameters
    ----------
    d : Dataset
        Features may be continuous (correlation test) or categorical
        (ANOVA); candidates are ranked by log p-value.
    family, residual_kind : str, optional
        Model family and residual type; defaults follow the outcome kind
        (linear/raw, logistic/raw, cox/martingale).
    rule : StoppingRule
        Comparative rules judge each trial model against the current one
        and discard a failing candidate. Residual-norm and feature-count
        rules are checked before each scan.
    assoc_method : {"pearson", "spearman"}
        Correlation test for continuous features.
    workers : int
        Threads for the candidate scan; results do not depend on it.
    """
    fam, residual_kind = _resolve(d, family, residual_kind)
    if rule.kind == "adj-r2" and fam.name != LINEAR:
        raise UsageError("adjusted R^2 stopping needs the linear family")
    fit_options = fit_options or {}
    scanner = scanner or CandidateScanner(d, method=assoc_method, workers=workers)
    eval0 = scanner.evaluations
    n = d.n
    cap = _saturation_cap(d)
    outcome = d.outcome

    def fit(cols):
        Z, _ = design_matrix(d, cols)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return fam.fit(Z, outcome, **fit_options)

    model = fit([])
    fits = 1
    r = residuals(model, outcome, residual_kind).values
    norm0 = residual_sq_norm(r)
    selected: list[int] = []
    excluded: list[int] = []
    aliased: list[int] = []
    steps: list[Step] = []
    models = [model]
    events: list[_Event] = []
    rejected = None
    reason = EXHAUSTED
    while True:
        if not admits_more(rule, r, len(selected)):
            reason = MAX_REACHED if (rule.feature_cap and len(selected) >= rule.feature_cap) else CRITERION
            break
        if len(selected) >= cap or model.df >= n - 1:
            reason = SATURATED
            break
        before = scanner.evaluations
        try:
            best = scanner.best(r, selected + excluded)
        except NoCandidates:
            reason = EXHAUSTED
            break
        used = scanner.evaluations - before
        j = best.feature_index
        try:
            trial = fit(selected + [j])
        except NumericalError:
            fits += 1
            reason = FIT_FAILED
            break
        fits += 1
        if trial.dropped:
            excluded.append(j)
            aliased.append(j)
            events.append(_Event("alias", j, used))
            continue
        r_trial = residuals(trial, outcome, residual_kind).values
        step = Step(
            feature_index=j,
            log_p=best.log_p,
            statistic=best.statistic,
            lr_statistic=log_likelihood_ratio(trial, model),
            bic=bic(trial, n),
            residual_norm=residual_sq_norm(r_trial),
            added_df=trial.df - model.df,
            converged=trial.converged,
        )
        if not improves(rule, trial, model, n):
            rejected = step
            events.append(_Event("reject", j, used))
            reason = CRITERION
            break
        selected.append(j)
        steps.append(step)
        model = trial
        models.append(model)
        r = r_trial
        events.append(_Event("accept", j, used))
    params = gomp_config(fam.name, residual_kind, rule, assoc_method, fit_options)
    return _notify(
        SelectionResult(
            selected=tuple(selected),
            steps=tuple(steps),
            final_model=model,
            stop_reason=reason,
            config_fingerprint=fingerprint(params),
            family=fam.name,
            residual_kind=residual_kind,
            rule=rule,
            assoc_method=assoc_method,
            initial_residual_norm=norm0,
            model_fits=fits,
            assoc_evaluations=scanner.evaluations - eval0,
            aliased=tuple(aliased),
            rejected=rejected,
            models=tuple(models),
            events=tuple(events),
            n_features=d.p,
        )
    )


def _truncate(full: SelectionResult, rule: StoppingRule, n: int, cap: int, fit_options=None) -> SelectionResult:
    """Replay a finished run under a stricter rule of the same kind."""
    k = 0  # accepted steps kept
    fits = 1
    evaluations = 0
    aliased = []
    events = []
    rejected = None
    norms = [full.initial_residual_norm] + [s.residual_norm for s in full.steps]
    reason = None
    for ev in full.events:
        model = full.models[k]
        if not admits_more(rule, norms[k], k):
            reason = MAX_REACHED if (rule.feature_cap and k >= rule.feature_cap) else CRITERION
            break
        if k >= cap or model.df >= n - 1:
            reason = SATURATED
            break
        fits += 1
        evaluations += ev.evaluations
        events.append(ev)
        if ev.kind == "alias":
            aliased.append(ev.feature)
            continue
        step = full.steps[k] if ev.kind == "accept" else full.rejected
        trial = full.models[k + 1] if ev.kind == "accept" else None
        if trial is None or not improves(rule, trial, model, n):
            rejected = step
            events[-1] = _Event("reject", ev.feature, ev.evaluations)
            reason = CRITERION
            break
        k += 1
    if reason is None:
        # the loose run ended on its own; replay its final pre-scan check
        if not admits_more(rule, norms[k], k):
            reason = MAX_REACHED if (rule.feature_cap and k >= rule.feature_cap) else CRITERION
        else:
            reason = full.stop_reason
            if reason == FIT_FAILED:
                fits += 1
    params = gomp_config(full.family, full.residual_kind, rule, full.assoc_method, fit_options)
    return SelectionResult(
        selected=full.selected[:k],
        steps=full.steps[:k],
        final_model=full.models[k],
        stop_reason=reason,
        config_fingerprint=fingerprint(params),
        family=full.family,
        residual_kind=full.residual_kind,
        rule=rule,
        assoc_method=full.assoc_method,
        initial_residual_norm=full.initial_residual_norm,
        model_fits=fits,
        assoc_evaluations=evaluations,
        aliased=tuple(aliased),
        rejected=rejected,
        models=full.models[: k + 1],
        events=tuple(events),
        n_features=full.n_features,
    )


def gomp_path(
    d: Dataset,
    family: str | None = None,
    residual_kind: str | None = None,
    rule_grid: list[StoppingRule] = (),
    assoc_method: str = PEARSON,
    workers: int = 1,
    fit_options: dict | None = None,
    independent: bool = False,
) -> list[SelectionResult]:
    """One :class:`SelectionResult` per rule in ``rule_grid`` (same order).

    The selection sequence does not depend on the threshold, so a single run
    at the loosest rule is truncated for every stricter one. With
    ``independent=True`` each grid point is run separately instead.
    """
    rule_grid = list(rule_grid)
    if not rule_grid:
        raise UsageError("empty stopping-rule grid")
    kinds = {(r.kind, r.max_features) for r in rule_grid}
    if len(kinds) != 1:
        raise UsageError("all rules in a grid must share the kind and feature cap")
    if independent:
        scanner = CandidateScanner(d, method=assoc_method, workers=workers)
        return [
            gomp_select(d, family, residual_kind, rule, assoc_method, workers, fit_options, scanner)
            for rule in rule_grid
        ]
    loosest = max(rule_grid, key=lambda r: r.looseness)
    full = gomp_select(d, family, residual_kind, loosest, assoc_method, workers, fit_options)
    cap = _saturation_cap(d)
    out = []
    for rule in rule_grid:
        if rule == loosest:
            out.append(full)
            continue
        out.append(_notify(_truncate(full, rule, d.n, cap, fit_options)))
    return out
