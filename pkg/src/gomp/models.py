"""Regression families used to build the current model and its residuals.

Three families are provided: least-squares linear regression, logistic
regression (Newton/IRLS) and the Cox proportional hazards model with the
Breslow tie approximation. Each family bundles a fitter and a residual
function; :func:`register_family` admits further families without changes to
the selection engine.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .datamodel import BINARY, CONTINUOUS, SURVIVAL, Dataset, Outcome
from .errors import NumericalError, UsageError

LINEAR = "linear"
LOGISTIC = "logistic"
COX = "cox"

RAW = "raw"
PEARSON = "pearson"
DEVIANCE = "deviance"
MARTINGALE = "martingale"

PIVOT_RTOL = 1e-10
COEF_CAP = 30.0
# floor on RSS relative to TSS: an exact fit must not produce an infinite likelihood
RSS_FLOOR = 1e-24


@dataclass(frozen=True)
class FittedModel:
    """Maximum-likelihood fit of one family on a design matrix.

    ``coefficients`` spans every design column passed to the fitter, with
    the intercept first for linear and logistic models. Columns dropped for
    rank deficiency keep a zero coefficient and are listed in ``dropped``;
    ``df`` counts only the estimated coefficients.
    """

    family: str
    coefficients: np.ndarray
    log_likelihood: float
    df: int
    fitted_values: np.ndarray
    converged: bool = True
    iterations: int = 0
    dropped: tuple[int, ...] = ()
    separated: bool = False
    rss: float | None = None
    tss: float | None = None

    @property
    def has_intercept(self) -> bool:
        return self.family != COX

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0]) if self.has_intercept else 0.0

    @property
    def beta(self) -> np.ndarray:
        return self.coefficients[1:] if self.has_intercept else self.coefficients

    @property
    def n(self) -> int:
        return len(self.fitted_values)

    def linear_predictor(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float).reshape(len(Z), -1)
        return self.intercept + Z @ self.beta

    def predict(self, Z) -> np.ndarray:
        """Response-scale predictions: mean, probability or Cox risk score."""
        eta = self.linear_predictor(Z)
        return expit(eta) if self.family == LOGISTIC else eta


@dataclass(frozen=True)
class ResidualVector:
    kind: str
    values: np.ndarray


def independent_columns(Z) -> tuple[np.ndarray, list[int]]:
    """Split design columns into a full-rank set and the aliased remainder.

    Columns are taken in order, so an earlier column is always kept over a
    later one that duplicates it. A centered column whose component
    orthogonal to the kept columns is below ``PIVOT_RTOL`` times the largest
    centered column norm is dropped. Centered-constant columns are always
    dropped since every family here has an intercept or (Cox) is invariant
    to shifts.
    """
    Z = np.asarray(Z, dtype=float)
    k = Z.shape[1]
    if k == 0:
        return np.arange(0), []
    Zc = Z - Z.mean(axis=0)
    norms = np.linalg.norm(Zc, axis=0)
    scale = max(1.0, float(np.max(np.linalg.norm(Z, axis=0))))
    lead = float(norms.max())
    basis = np.empty((Z.shape[0], 0))
    keep, dropped = [], []
    for j in range(k):
        v = Zc[:, j].copy()
        # two passes of Gram-Schmidt keep the projection accurate
        for _ in range(2):
            v -= basis @ (basis.T @ v)
        rn = float(np.linalg.norm(v))
        if rn > PIVOT_RTOL * lead and rn > 1e-13 * scale:
            basis = np.column_stack([basis, v / rn])
            keep.append(j)
        else:
            dropped.append(j)
    return np.array(keep, dtype=int), dropped


def _warn_dropped(dropped):
    if dropped:
        warnings.warn(
            f"design columns {dropped} are linearly dependent and were dropped",
            RuntimeWarning,
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------


def gaussian_loglik(rss: float, n: int, tss: float | None = None) -> float:
    """Gaussian log-likelihood at the MLE variance ``rss / n``."""
    floor = RSS_FLOOR * tss if tss else 0.0
    rss = max(rss, floor, 1e-300)
    return -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)


def fit_linear(Z, y) -> FittedModel:
    """Least squares with an intercept."""
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(len(y), -1)
    n, k = Z.shape
    ybar = float(y.mean())
    yc = y - ybar
    tss = float(yc @ yc)
    beta = np.zeros(k)
    keep, dropped = independent_columns(Z)
    _warn_dropped(dropped)
    fitted = np.full(n, ybar)
    intercept = ybar
    if keep.size:
        zbar = Z[:, keep].mean(axis=0)
        Zc = Z[:, keep] - zbar
        Q, R = np.linalg.qr(Zc)
        b = solve_triangular(R, Q.T @ yc)
        beta[keep] = b
        intercept = ybar - float(zbar @ b)
        fitted = ybar + Zc @ b
    resid = y - fitted
    rss = float(resid @ resid)
    return FittedModel(
        family=LINEAR,
        coefficients=np.concatenate([[intercept], beta]),
        log_likelihood=gaussian_loglik(rss, n, tss),
        df=int(keep.size) + 1,
        fitted_values=fitted,
        dropped=tuple(dropped),
        rss=rss,
        tss=tss,
    )


# ---------------------------------------------------------------------------
# Logistic
# ---------------------------------------------------------------------------


def bernoulli_loglik(eta, y) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_score(A, y, coef) -> np.ndarray:
    """Gradient of the Bernoulli log-likelihood; ``A`` includes the intercept column."""
    return A.T @ (y - expit(A @ coef))


def _cap(coef, start):
    tail = coef[start:]
    m = np.max(np.abs(tail)) if tail.size else 0.0
    if m > COEF_CAP:
        coef = coef.copy()
        coef[start:] = tail * (COEF_CAP / m)
        return coef, True
    return coef, False


def fit_logistic(Z, y, max_iter: int = 100, tol: float = 1e-8) -> FittedModel:
    """Logistic regression by iteratively reweighted least squares.

    Stops when the relative log-likelihood change drops below ``tol``.
    Separation shows up as a coefficient escaping ``COEF_CAP``; the
    coefficient vector is then scaled back to the cap and the fit is
    returned with ``converged=False`` and ``separated=True``.
    """
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(len(y), -1)
    n, k = Z.shape
    n1 = float(y.sum())
    if n1 == 0 or n1 == n:
        raise NumericalError("logistic regression needs both classes")
    keep, dropped = independent_columns(Z)
    _warn_dropped(dropped)
    A = np.column_stack([np.ones(n), Z[:, keep]])
    coef = np.zeros(A.shape[1])
    coef[0] = math.log(n1 / (n - n1))
    eta = A @ coef
    ll = bernoulli_loglik(eta, y)
    converged = keep.size == 0
    separated = False
    it = 0
    while not converged and it < max_iter:
        it += 1
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = A.T @ (y - mu)
        H = A.T @ (A * w[:, None])
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            new = coef + t * step
            new_ll = bernoulli_loglik(A @ new, y)
            if new_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        new, separated = _cap(new, 1)
        if separated:
            coef = new
            eta = A @ coef
            ll = bernoulli_loglik(eta, y)
            break
        change = abs(new_ll - ll)
        coef, ll = new, new_ll
        eta = A @ coef
        converged = change <= tol * max(abs(ll), 1e-300)
    full = np.zeros(k + 1)
    full[0] = coef[0]
    full[1 + keep] = coef[1:]
    return FittedModel(
        family=LOGISTIC,
        coefficients=full,
        log_likelihood=ll,
        df=int(keep.size) + 1,
        fitted_values=expit(eta),
        converged=converged and not separated,
        iterations=it,
        dropped=tuple(dropped),
        separated=separated,
    )


# ---------------------------------------------------------------------------
# Cox
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _RiskSets:
    order: np.ndarray  # sample indices sorted by time
    first: np.ndarray  # in sorted order: first index of the tie group
    last: np.ndarray  # in sorted order: last index of the tie group
    event: np.ndarray  # event indicator in sorted order

    @classmethod
    def build(cls, time, event):
        time = np.asarray(time, dtype=float)
        order = np.argsort(time, kind="stable")
        ts = time[order]
        return cls(
            order=order,
            first=np.searchsorted(ts, ts, side="left"),
            last=np.searchsorted(ts, ts, side="right") - 1,
            event=np.asarray(event, dtype=float)[order],
        )


def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def cox_partial_loglik(eta, time, event, risk=None) -> float:
    """Breslow partial log-likelihood at linear predictor ``eta``."""
    risk = risk or _RiskSets.build(time, event)
    es = np.asarray(eta, dtype=float)[risk.order]
    c = float(es.max()) if es.size else 0.0
    s0 = _revcumsum(np.exp(es - c))[risk.first]
    ev = risk.event == 1
    return float(np.sum(es[ev] - np.log(s0[ev]) - c))


def _cox_derivatives(Zs, es, risk, hessian=True):
    """log-likelihood, score and Hessian with samples already in time order."""
    c = float(es.max())
    w = np.exp(es - c)
    ev = risk.event == 1
    s0 = _revcumsum(w)[risk.first]
    s1 = _revcumsum(w[:, None] * Zs)[risk.first]
    ll = float(np.sum(es[ev] - np.log(s0[ev]) - c))
    mean = s1[ev] / s0[ev, None]
    grad = np.sum(Zs[ev] - mean, axis=0)
    if not hessian:
        return ll, grad, None
    s2 = _revcumsum(w[:, None, None] * Zs[:, :, None] * Zs[:, None, :])[risk.first]
    hess = -(np.sum(s2[ev] / s0[ev, None, None], axis=0) - mean.T @ mean)
    return ll, grad, hess


def cox_score(Z, time, event, beta) -> np.ndarray:
    """Score (gradient) of the Breslow partial log-likelihood."""
    risk = _RiskSets.build(time, event)
    Zs = np.asarray(Z, dtype=float).reshape(len(time), -1)[risk.order]
    return _cox_derivatives(Zs, Zs @ np.asarray(beta, float), risk, hessian=False)[1]


def fit_cox(Z, time, event, max_iter: int = 100, tol: float = 1e-8) -> FittedModel:
    """Cox proportional hazards by Newton-Raphson on the Breslow likelihood."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    if not np.any(event == 1):
        raise NumericalError("Cox model undefined: no events")
    n = len(time)
    Z = np.asarray(Z, dtype=float).reshape(n, -1)
    k = Z.shape[1]
    keep, dropped = independent_columns(Z)
    _warn_dropped(dropped)
    risk = _RiskSets.build(time, event)
    Zs = Z[risk.order][:, keep]
    beta = np.zeros(keep.size)
    ll = cox_partial_loglik(np.zeros(n), time, event, risk)
    converged = keep.size == 0
    separated = False
    it = 0
    while not converged and it < max_iter:
        it += 1
        _, grad, hess = _cox_derivatives(Zs, Zs @ beta, risk)
        step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            new = beta + t * step
            new_ll = _cox_derivatives(Zs, Zs @ new, risk, hessian=False)[0]
            if new_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        new, separated = _cap(new, 0)
        if separated:
            beta = new
            ll = _cox_derivatives(Zs, Zs @ beta, risk, hessian=False)[0]
            break
        change = abs(new_ll - ll)
        beta, ll = new, new_ll
        converged = change <= tol * max(abs(ll), 1e-300)
    full = np.zeros(k)
    full[keep] = beta
    return FittedModel(
        family=COX,
        coefficients=full,
        log_likelihood=ll,
        df=int(keep.size),
        fitted_values=Z @ full,
        converged=converged and not separated,
        iterations=it,
        dropped=tuple(dropped),
        separated=separated,
    )


def breslow_cumulative_hazard(eta, time, event) -> np.ndarray:
    """Breslow baseline cumulative hazard evaluated at each sample's own time."""
    risk = _RiskSets.build(time, event)
    es = np.asarray(eta, dtype=float)[risk.order]
    c = float(es.max())
    s0 = _revcumsum(np.exp(es - c))[risk.first]
    # hazard increments carry exp(-c); they are multiplied by exp(eta - c) later
    inc = np.where(risk.event == 1, 1.0 / s0, 0.0)
    cum = np.cumsum(inc)[risk.last]
    out = np.empty_like(cum)
    out[risk.order] = cum * np.exp(-c)
    return out


# ---------------------------------------------------------------------------
# Residuals and family registry
# ---------------------------------------------------------------------------


def _glm_residuals(m: FittedModel, o: Outcome, kind: str) -> np.ndarray:
    y = o.y
    mu = m.fitted_values
    raw = y - mu
    if kind == RAW:
        return raw
    if m.family == LINEAR:
        # unit variance function: Pearson and deviance residuals coincide with raw ones
        return raw
    mu = np.clip(mu, 1e-300, 1.0 - 1e-16)
    if kind == PEARSON:
        return raw / np.sqrt(mu * (1.0 - mu))
    if kind == DEVIANCE:
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y == 1, np.log(mu), np.log1p(-mu))
        return np.sign(raw) * np.sqrt(np.maximum(-2.0 * term, 0.0))
    raise UsageError(f"residual kind {kind!r} not available for {m.family}")


def _cox_residuals(m: FittedModel, o: Outcome, kind: str) -> np.ndarray:
    if kind != MARTINGALE:
        raise UsageError(f"residual kind {kind!r} not available for cox")
    eta = m.fitted_values
    cum = breslow_cumulative_hazard(eta, o.time, o.event)
    return o.event - cum * np.exp(eta)


def _fit_linear_outcome(Z, o: Outcome, **_):
    return fit_linear(Z, o.y)


def _fit_logistic_outcome(Z, o: Outcome, max_iter=100, tol=1e-8):
    return fit_logistic(Z, o.y, max_iter=max_iter, tol=tol)


def _fit_cox_outcome(Z, o: Outcome, max_iter=100, tol=1e-8):
    return fit_cox(Z, o.time, o.event, max_iter=max_iter, tol=tol)


@dataclass(frozen=True)
class Family:
    """A model family: fitter, residual extractor and compatibility rules.

    ``fit(Z, outcome, **options)`` must return a :class:`FittedModel` whose
    ``log_likelihood`` and ``df`` are meaningful for nested comparisons.
    """

    name: str
    outcome_kind: str
    residual_kinds: tuple[str, ...]
    default_residual: str
    fit: Callable = field(repr=False)
    residuals: Callable = field(repr=False)


FAMILIES: dict[str, Family] = {}


def register_family(family: Family) -> None:
    FAMILIES[family.name] = family


register_family(
    Family(LINEAR, CONTINUOUS, (RAW, PEARSON, DEVIANCE), RAW, _fit_linear_outcome, _glm_residuals)
)
register_family(
    Family(LOGISTIC, BINARY, (RAW, PEARSON, DEVIANCE), RAW, _fit_logistic_outcome, _glm_residuals)
)
register_family(Family(COX, SURVIVAL, (MARTINGALE,), MARTINGALE, _fit_cox_outcome, _cox_residuals))

DEFAULT_FAMILY = {CONTINUOUS: LINEAR, BINARY: LOGISTIC, SURVIVAL: COX}


def get_family(name: str) -> Family:
    try:
        return FAMILIES[name]
    except KeyError:
        raise UsageError(f"unknown model family {name!r}; known: {sorted(FAMILIES)}") from None


def check_compatible(family: str, outcome_kind: str, residual_kind: str | None = None) -> Family:
    """Validate a family/outcome/residual combination and return the family."""
    fam = get_family(family)
    if fam.outcome_kind != outcome_kind:
        raise UsageError(f"family {family!r} needs a {fam.outcome_kind} outcome, got {outcome_kind}")
    if residual_kind is not None and residual_kind not in fam.residual_kinds:
        raise UsageError(
            f"residual kind {residual_kind!r} incompatible with {family}; use one of {fam.residual_kinds}"
        )
    return fam


def residuals(m: FittedModel, d: Dataset | Outcome, kind: str | None = None) -> ResidualVector:
    """Residuals of ``m`` against the outcome of ``d`` (a Dataset or an Outcome)."""
    outcome = d.outcome if isinstance(d, Dataset) else d
    fam = get_family(m.family)
    kind = kind or fam.default_residual
    if kind not in fam.residual_kinds:
        raise UsageError(f"residual kind {kind!r} incompatible with {m.family}")
    return ResidualVector(kind, fam.residuals(m, outcome, kind))


def log_likelihood_ratio(m_new: FittedModel, m_old: FittedModel) -> float:
    """``2 (ll_new - ll_old)`` clamped at zero."""
    if m_new.family != m_old.family:
        raise UsageError("likelihood ratio between different families")
    stat = 2.0 * (m_new.log_likelihood - m_old.log_likelihood)
    if math.isnan(stat):
        return math.nan
    return max(stat, 0.0)
