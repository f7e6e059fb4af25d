"""Stopping criteria deciding whether a newly added feature is kept."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .models import LINEAR, FittedModel, ResidualVector, log_likelihood_ratio
from .special import chi2_isf, log_chi2_sf

LR = "lr"
ADJ_R2 = "adj-r2"
BIC = "bic"
RESIDUAL_NORM = "residual-norm"
MAX_FEATURES = "max-features"
RULE_KINDS = (LR, ADJ_R2, BIC, RESIDUAL_NORM, MAX_FEATURES)

# rules that compare the model before and after a candidate is added
COMPARATIVE = (LR, ADJ_R2, BIC)


@dataclass(frozen=True)
class StoppingRule:
    """One stopping criterion, optionally combined with a feature-count cap.

    ``value`` is the LR threshold (chi-square critical value at 1 df), the
    minimum adjusted R^2 gain, the minimum BIC drop, the squared residual
    norm epsilon, or the feature count, depending on ``kind``.
    """

    kind: str
    value: float
    max_features: int | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise UsageError(f"unknown stopping rule {self.kind!r}; known: {RULE_KINDS}")
        v = self.value
        if self.kind == LR and not v > 0:
            raise UsageError("LR threshold must be > 0")
        if self.kind == ADJ_R2 and not 0 < v < 1:
            raise UsageError("adjusted R^2 gain must lie in (0, 1)")
        if self.kind == BIC and not v >= 0:
            raise UsageError("BIC drop must be >= 0")
        if self.kind == RESIDUAL_NORM and not v > 0:
            raise UsageError("residual-norm epsilon must be > 0")
        if self.kind == MAX_FEATURES:
            if v != int(v) or v < 1:
                raise UsageError("max-features needs an integer k >= 1")
            object.__setattr__(self, "value", int(v))
        if self.max_features is not None and self.max_features < 1:
            raise UsageError("max_features must be >= 1")

    @property
    def feature_cap(self) -> int | None:
        caps = [c for c in (self.max_features, self.value if self.kind == MAX_FEATURES else None) if c]
        return min(caps) if caps else None

    @property
    def looseness(self) -> float:
        """Sort key: larger means more features admitted."""
        if self.kind == MAX_FEATURES:
            return float(self.value)
        return -float(self.value)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "max_features": self.max_features}


def bic(m: FittedModel, n: int) -> float:
    return -2.0 * m.log_likelihood + m.df * math.log(n)


def adjusted_r2(m: FittedModel, n: int) -> float:
    if m.family != LINEAR:
        raise UsageError("adjusted R^2 is defined for the linear family only")
    if n - m.df <= 0:
        return -math.inf
    if not m.tss:
        return 0.0
    r2 = 1.0 - m.rss / m.tss
    return 1.0 - (1.0 - r2) * (n - 1) / (n - m.df)


def lr_significance(threshold: float) -> float:
    """log significance level of a 1-df chi-square critical value."""
    return float(log_chi2_sf(threshold, 1))


def lr_improves(m: FittedModel, m_prev: FittedModel, threshold: float) -> bool:
    """LR test of the nested pair at the significance level implied by ``threshold``.

    A step adding ``k`` coefficients is judged against the chi-square with
    ``k`` degrees of freedom at the same significance level, so categorical
    features with several dummies are not favoured.
    """
    stat = log_likelihood_ratio(m, m_prev)
    ddf = m.df - m_prev.df
    if math.isnan(stat) or ddf <= 0:
        return False
    if ddf == 1:
        return stat > threshold
    return float(log_chi2_sf(stat, ddf)) < lr_significance(threshold)


def residual_sq_norm(r) -> float:
    """Squared Euclidean norm; a scalar is taken to be the squared norm already."""
    if np.ndim(getattr(r, "values", r)) == 0:
        return float(getattr(r, "values", r))
    v = np.asarray(r.values if isinstance(r, ResidualVector) else r, dtype=float)
    return float(v @ v)


def admits_more(rule: StoppingRule, r, n_selected: int) -> bool:
    """Checks made before scanning: residual norm and feature-count cap."""
    cap = rule.feature_cap
    if cap is not None and n_selected >= cap:
        return False
    if rule.kind == RESIDUAL_NORM:
        return residual_sq_norm(r) > rule.value
    return True


def improves(rule: StoppingRule, M: FittedModel, M_prev: FittedModel, n: int) -> bool:
    """Whether ``M`` (one feature more than ``M_prev``) passes the comparative rule.

    Non-comparative rules always accept.
    """
    if rule.kind not in COMPARATIVE:
        return True
    if rule.kind == ADJ_R2 and M.family != LINEAR:
        raise UsageError("adjusted R^2 stopping needs the linear family")
    if not math.isfinite(M.log_likelihood):
        return False
    if rule.kind == LR:
        return lr_improves(M, M_prev, rule.value)
    if rule.kind == ADJ_R2:
        return adjusted_r2(M, n) - adjusted_r2(M_prev, n) > rule.value
    return bic(M_prev, n) - bic(M, n) > rule.value


def should_continue(
    rule: StoppingRule,
    M: FittedModel,
    M_prev: FittedModel | None,
    r,
    n: int,
    n_selected: int = 0,
) -> bool:
    """Loop-head decision: keep selecting after reaching model ``M``?

    ``M_prev`` is the model before the last addition, ``None`` on the first
    iteration (comparative rules then always continue). ``r`` holds the
    residuals of ``M`` and ``n_selected`` the size of its feature set.
    """
    if rule.kind == ADJ_R2 and M.family != LINEAR:
        raise UsageError("adjusted R^2 stopping needs the linear family")
    if M_prev is not None and not improves(rule, M, M_prev, n):
        return False
    return admits_more(rule, r, n_selected)


def lr_grid(count: int = 10, low: float = 0.95, high: float = 0.99) -> list[float]:
    """Chi-square (1 df) critical values at ``count`` equally spaced quantile levels."""
    return [chi2_isf(1.0 - q, 1) for q in np.linspace(low, high, count)]


def adj_r2_grid(count: int = 10, low: float = 0.0005, high: float = 0.005) -> list[float]:
    return [float(v) for v in np.linspace(low, high, count)]


def default_grid(kind: str, count: int = 10) -> list[StoppingRule]:
    """The default 10-point grid per rule kind."""
    if kind == LR:
        values = lr_grid(count)
    elif kind == ADJ_R2:
        values = adj_r2_grid(count)
    elif kind == BIC:
        values = [float(v) for v in np.linspace(0.0, 10.0, count)]
    elif kind == RESIDUAL_NORM:
        values = [float(v) for v in np.geomspace(1e-4, 1e-1, count)]
    elif kind == MAX_FEATURES:
        values = list(range(1, count + 1))
    else:
        raise UsageError(f"unknown stopping rule {kind!r}")
    return [StoppingRule(kind, v) for v in values]
