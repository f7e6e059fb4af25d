"""L1-penalized regression paths by cyclic coordinate descent.

The objectives are used exactly as written, without 1/n scaling:

* linear: ``sum (y - b0 - x'b)^2 + lam * |b|_1``
* logistic: ``-sum [y eta - log(1 + e^eta)] + lam * |b|_1``
* Cox: ``-(Breslow partial log-likelihood) + lam * |b|_1``

The intercept is never penalized and Cox has none. Logistic and Cox use an
outer quadratic approximation (working response and diagonal weights)
around the current estimate with coordinate descent inside it. Every
penalty value goes through an active-set loop: coordinate descent on the
active coefficients, then a full gradient sweep that adds any violator,
until the sweep finds none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit

from .datamodel import BINARY, CONTINUOUS, SURVIVAL, Dataset, design_matrix
from .errors import NumericalError, UsageError
from .models import COX, LINEAR, LOGISTIC, _RiskSets, breslow_cumulative_hazard, cox_partial_loglik

DEFAULT_LAMBDA_COUNT = 100
# deviance explained beyond which the path stops: the remaining fits interpolate
DEV_RATIO_STOP = 0.999
_MIN_WEIGHT = 1e-5


def soft_threshold(z, gamma):
    """``sign(z) * max(|z| - gamma, 0)``."""
    if np.any(np.asarray(gamma) < 0):
        raise UsageError("threshold must be >= 0")
    z = np.asarray(z, dtype=float)
    out = np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)
    return float(out) if out.ndim == 0 else out


@numba.njit(cache=True)
def _cd(X, w, res, beta, xw2, active, lam, tol, max_sweeps, b0, fit_intercept):
    """Coordinate descent on ``0.5 sum w (res)^2 + lam |beta|_1`` over ``active``.

    ``res`` is the working residual and is updated in place, as are
    ``beta`` and ``b0[0]``. Returns the number of sweeps.
    """
    n = X.shape[0]
    sw = 0.0
    for i in range(n):
        sw += w[i]
    for sweep in range(max_sweeps):
        biggest = 0.0
        if fit_intercept:
            s = 0.0
            for i in range(n):
                s += w[i] * res[i]
            d = s / sw
            if d != 0.0:
                b0[0] += d
                for i in range(n):
                    res[i] -= d
                biggest = max(biggest, abs(d))
        for a in range(active.shape[0]):
            j = active[a]
            if xw2[j] <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, j] * res[i]
            old = beta[j]
            z = g + xw2[j] * old
            if z > lam:
                new = (z - lam) / xw2[j]
            elif z < -lam:
                new = (z + lam) / xw2[j]
            else:
                new = 0.0
            if new != old:
                d = new - old
                for i in range(n):
                    res[i] -= d * X[i, j]
                beta[j] = new
                biggest = max(biggest, abs(d))
        if biggest < tol:
            return sweep + 1
    return max_sweeps


def _active_set_solve(X, w, res, beta, b0, lam, tol, fit_intercept, max_sweeps=100000, max_rounds=1000):
    """Active-set coordinate descent with full gradient sweeps."""
    xw2 = np.einsum("ij,i,ij->j", X, w, X)
    active = np.nonzero(beta)[0]
    sweeps = 0
    for _ in range(max_rounds):
        sweeps += _cd(X, w, res, beta, xw2, active.astype(np.int64), lam, tol, max_sweeps, b0, fit_intercept)
        grad = X.T @ (w * res)
        # only inactive columns can violate; the slack absorbs summation-order noise
        viol = np.nonzero((beta == 0.0) & (np.abs(grad) > lam * (1.0 + 1e-10)) & (xw2 > 0))[0]
        if viol.size == 0:
            return sweeps
        active = np.union1d(np.nonzero(beta)[0], viol)
    raise NumericalError("coordinate descent active-set loop did not settle")


@dataclass(frozen=True)
class LambdaPath:
    """A regularization path.

    ``coefficients`` has one row per penalty value; for linear and logistic
    paths column 0 is the intercept, followed by one column per design
    column (``owner`` maps design columns to feature indices).
    ``support_sizes`` counts features (not dummies) with a nonzero
    coefficient. ``truncated`` is set when the path stopped before its
    last requested penalty.
    """

    family: str
    lambdas: np.ndarray
    coefficients: np.ndarray
    support_sizes: np.ndarray
    owner: np.ndarray
    lambda_max: float
    deviance_ratio: np.ndarray
    truncated: bool = False
    iterations: np.ndarray = field(default=None, repr=False)

    @property
    def has_intercept(self) -> bool:
        return self.family != COX

    @property
    def beta(self) -> np.ndarray:
        """Penalized coefficients only (no intercept), one row per penalty."""
        return self.coefficients[:, 1:] if self.has_intercept else self.coefficients

    @property
    def intercepts(self) -> np.ndarray:
        return self.coefficients[:, 0] if self.has_intercept else np.zeros(len(self.lambdas))

    def support(self, k: int) -> list[int]:
        """Feature indices with a nonzero coefficient at path point ``k``."""
        return sorted({int(j) for j in self.owner[np.nonzero(self.beta[k])[0]]})

    def linear_predictor(self, Z, k: int) -> np.ndarray:
        return self.intercepts[k] + np.asarray(Z, dtype=float) @ self.beta[k]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lambda_max": self.lambda_max,
            "lambdas": [float(v) for v in self.lambdas],
            "support_sizes": [int(v) for v in self.support_sizes],
            "supports": [self.support(k) for k in range(len(self.lambdas))],
            "deviance_ratio": [float(v) for v in self.deviance_ratio],
            "truncated": self.truncated,
        }


def lambda_grid(lambda_max: float, n: int, p: int, count: int = DEFAULT_LAMBDA_COUNT, ratio=None):
    """Geometric grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    if count < 1:
        raise UsageError("need at least one penalty value")
    if ratio is None:
        ratio = 1e-3 if n > p else 1e-2
    if count == 1:
        return np.array([lambda_max])
    return lambda_max * np.geomspace(1.0, ratio, count)


def _check_lambdas(lambdas):
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0):
        raise UsageError("penalty values must be a non-empty vector of positive numbers")
    if np.any(np.diff(lam) >= 0):
        raise UsageError("penalty values must be strictly decreasing")
    return lam


def _sizes(coefs, owner, intercept):
    B = coefs[:, 1:] if intercept else coefs
    out = []
    for row in B:
        out.append(len(set(owner[np.nonzero(row)[0]].tolist())))
    return np.array(out, dtype=int)


def _design(d: Dataset):
    Z, owner = design_matrix(d, range(d.p))
    mask = np.asarray(d.candidate_mask, dtype=bool)[owner] if owner.size else np.zeros(0, bool)
    Z = np.asfortranarray(Z)
    return Z, owner, mask


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------


def lasso_linear(
    d: Dataset,
    lambdas=None,
    count: int = DEFAULT_LAMBDA_COUNT,
    ratio=None,
    tol: float = 1e-7,
) -> LambdaPath:
    """Linear LASSO path; ``lambdas`` defaults to a geometric grid below lambda_max."""
    if d.outcome.kind != CONTINUOUS:
        raise UsageError("linear LASSO needs a continuous outcome")
    Z, owner, mask = _design(d)
    y = d.outcome.y
    return _linear_path(Z, y, owner, mask, lambdas, count, ratio, tol)


def _linear_path(Z, y, owner, mask, lambdas, count, ratio, tol):
    n, k = Z.shape
    zbar = Z.mean(axis=0)
    Xc = np.asfortranarray(Z - zbar)
    Xc[:, ~mask] = 0.0
    ybar = float(y.mean())
    yc = y - ybar
    tss = float(yc @ yc)
    lam_max = 2.0 * float(np.max(np.abs(Xc.T @ yc))) if k else 0.0
    if lambdas is None:
        lams = lambda_grid(lam_max if lam_max > 0 else 1.0, n, k, count, ratio)
    else:
        lams = _check_lambdas(lambdas)
    beta = np.zeros(k)
    res = yc.copy()
    w = np.ones(n)
    b0 = np.zeros(1)
    rows, devs, iters = [], [], []
    truncated = False
    for lam in lams:
        it = _active_set_solve(Xc, w, res, beta, b0, lam / 2.0, tol, False)
        rss = float(res @ res)
        dev = 1.0 - rss / tss if tss > 0 else 0.0
        rows.append(np.concatenate([[ybar - float(zbar @ beta)], beta]))
        devs.append(dev)
        iters.append(it)
        if dev > DEV_RATIO_STOP and len(rows) < len(lams):
            truncated = True
            break
    coefs = np.array(rows)
    return LambdaPath(
        family=LINEAR,
        lambdas=lams[: len(rows)],
        coefficients=coefs,
        support_sizes=_sizes(coefs, owner, True),
        owner=owner,
        lambda_max=lam_max,
        deviance_ratio=np.array(devs),
        truncated=truncated,
        iterations=np.array(iters),
    )


# ---------------------------------------------------------------------------
# Logistic
# ---------------------------------------------------------------------------


def logistic_objective(Z, y, b0, beta, lam) -> float:
    eta = b0 + Z @ beta
    return float(-np.sum(y * eta - np.logaddexp(0.0, eta)) + lam * np.sum(np.abs(beta)))


def lasso_logistic(
    d: Dataset,
    lambdas=None,
    count: int = DEFAULT_LAMBDA_COUNT,
    ratio=None,
    tol: float = 1e-7,
    max_outer: int = 200,
) -> LambdaPath:
    """Logistic LASSO path with an unpenalized intercept."""
    if d.outcome.kind != BINARY:
        raise UsageError("logistic LASSO needs a binary outcome")
    Z, owner, mask = _design(d)
    return _logistic_path(Z, d.outcome.y, owner, mask, lambdas, count, ratio, tol, max_outer)


def _logistic_path(Z, y, owner, mask, lambdas, count, ratio, tol, max_outer):
    n, k = Z.shape
    Z = np.asfortranarray(Z.copy())
    Z[:, ~mask] = 0.0
    n1 = float(y.sum())
    if n1 == 0 or n1 == n:
        raise NumericalError("logistic LASSO needs both classes")
    b0 = np.array([math.log(n1 / (n - n1))])
    ybar = n1 / n
    lam_max = float(np.max(np.abs(Z.T @ (y - ybar)))) if k else 0.0
    if lambdas is None:
        lams = lambda_grid(lam_max if lam_max > 0 else 1.0, n, k, count, ratio)
    else:
        lams = _check_lambdas(lambdas)
    null_ll = float(np.sum(y * b0[0] - np.logaddexp(0.0, b0[0])))
    beta = np.zeros(k)
    rows, devs, iters = [], [], []
    truncated = False
    for lam in lams:
        ok, it = _glm_outer(Z, y, beta, b0, lam, tol, max_outer)
        if not ok:
            truncated = True
            break
        eta = b0[0] + Z @ beta
        ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        # saturated log-likelihood of 0/1 data is 0
        dev = 1.0 - ll / null_ll if null_ll < 0 else 0.0
        rows.append(np.concatenate([b0, beta]))
        devs.append(dev)
        iters.append(it)
        if dev > DEV_RATIO_STOP and len(rows) < len(lams):
            truncated = True
            break
    coefs = np.array(rows).reshape(len(rows), k + 1)
    return LambdaPath(
        family=LOGISTIC,
        lambdas=lams[: len(rows)],
        coefficients=coefs,
        support_sizes=_sizes(coefs, owner, True),
        owner=owner,
        lambda_max=lam_max,
        deviance_ratio=np.array(devs),
        truncated=truncated,
        iterations=np.array(iters),
    )


def _glm_outer(Z, y, beta, b0, lam, tol, max_outer):
    """Proximal-Newton iterations for one logistic penalty value (in place).

    Returns ``(converged, inner sweeps)``. A failed solve leaves the last
    accepted iterate in ``beta`` / ``b0``.
    """
    sweeps = 0
    obj = logistic_objective(Z, y, b0[0], beta, lam)
    for _ in range(max_outer):
        eta = b0[0] + Z @ beta
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), _MIN_WEIGHT)
        res = (y - mu) / w
        old_beta, old_b0 = beta.copy(), b0.copy()
        sweeps += _active_set_solve(Z, w, res, beta, b0, lam, tol * 0.01, True)
        t = 1.0
        new_beta, new_b0 = beta.copy(), b0.copy()
        while True:
            cand = old_beta + t * (new_beta - old_beta)
            cb0 = old_b0 + t * (new_b0 - old_b0)
            new_obj = logistic_objective(Z, y, cb0[0], cand, lam)
            if new_obj <= obj + 1e-12 * abs(obj) or t < 1e-8:
                break
            t *= 0.5
        beta[:] = cand
        b0[:] = cb0
        change = max(float(np.max(np.abs(beta - old_beta), initial=0.0)), abs(float(b0[0] - old_b0[0])))
        obj = new_obj
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta), initial=0.0) > 1e6:
            beta[:] = old_beta
            b0[:] = old_b0
            return False, sweeps
        if change < tol:
            return True, sweeps
    return False, sweeps


# ---------------------------------------------------------------------------
# Cox
# ---------------------------------------------------------------------------


def cox_objective(Z, time, event, beta, lam, risk=None) -> float:
    return -cox_partial_loglik(Z @ beta, time, event, risk) + lam * float(np.sum(np.abs(beta)))


def _cox_working(eta, time, event, risk):
    """Score per sample (martingale residual) and diagonal Hessian weights."""
    es = eta[risk.order]
    c = float(es.max())
    ew = np.exp(es - c)
    s0 = np.cumsum(ew[::-1])[::-1][risk.first]
    inv = np.where(risk.event == 1, 1.0 / s0, 0.0)
    inv2 = np.where(risk.event == 1, 1.0 / s0**2, 0.0)
    cum1 = np.cumsum(inv)[risk.last]
    cum2 = np.cumsum(inv2)[risk.last]
    g = risk.event - ew * cum1
    w = ew * cum1 - ew**2 * cum2
    out_g = np.empty_like(g)
    out_w = np.empty_like(w)
    out_g[risk.order] = g
    out_w[risk.order] = w
    return out_g, out_w


def cox_saturated_loglik(time, event) -> float:
    """Breslow partial log-likelihood of the saturated model."""
    t = np.asarray(time)[np.asarray(event) == 1]
    _, counts = np.unique(t, return_counts=True)
    return float(-np.sum(counts * np.log(counts)))


def lasso_cox(
    d: Dataset,
    lambdas=None,
    count: int = DEFAULT_LAMBDA_COUNT,
    ratio=None,
    tol: float = 1e-7,
    max_outer: int = 200,
) -> LambdaPath:
    """Cox LASSO path (Breslow ties, no intercept)."""
    if d.outcome.kind != SURVIVAL:
        raise UsageError("Cox LASSO needs a survival outcome")
    Z, owner, mask = _design(d)
    return _cox_path(Z, d.outcome.time, d.outcome.event, owner, mask, lambdas, count, ratio, tol, max_outer)


def _cox_path(Z, time, event, owner, mask, lambdas, count, ratio, tol, max_outer):
    if not np.any(event == 1):
        raise NumericalError("Cox LASSO undefined: no events")
    n, k = Z.shape
    Z = np.asfortranarray(Z.copy())
    Z[:, ~mask] = 0.0
    risk = _RiskSets.build(time, event)
    g0, _ = _cox_working(np.zeros(n), time, event, risk)
    lam_max = float(np.max(np.abs(Z.T @ g0))) if k else 0.0
    if lambdas is None:
        lams = lambda_grid(lam_max if lam_max > 0 else 1.0, n, k, count, ratio)
    else:
        lams = _check_lambdas(lambdas)
    null_ll = cox_partial_loglik(np.zeros(n), time, event, risk)
    sat_ll = cox_saturated_loglik(time, event)
    beta = np.zeros(k)
    rows, devs, iters = [], [], []
    truncated = False
    for lam in lams:
        ok, it = _cox_outer(Z, time, event, risk, beta, lam, tol, max_outer)
        if not ok:
            truncated = True
            break
        ll = cox_partial_loglik(Z @ beta, time, event, risk)
        dev = (ll - null_ll) / (sat_ll - null_ll) if sat_ll > null_ll else 0.0
        rows.append(beta.copy())
        devs.append(dev)
        iters.append(it)
        if dev > DEV_RATIO_STOP and len(rows) < len(lams):
            truncated = True
            break
    coefs = np.array(rows).reshape(len(rows), k)
    return LambdaPath(
        family=COX,
        lambdas=lams[: len(rows)],
        coefficients=coefs,
        support_sizes=_sizes(coefs, owner, False),
        owner=owner,
        lambda_max=lam_max,
        deviance_ratio=np.array(devs),
        truncated=truncated,
        iterations=np.array(iters),
    )


def _cox_outer(Z, time, event, risk, beta, lam, tol, max_outer):
    sweeps = 0
    b0 = np.zeros(1)
    obj = cox_objective(Z, time, event, beta, lam, risk)
    for _ in range(max_outer):
        eta = Z @ beta
        g, w = _cox_working(eta, time, event, risk)
        w = np.maximum(w, _MIN_WEIGHT)
        res = g / w
        old = beta.copy()
        sweeps += _active_set_solve(Z, w, res, beta, b0, lam, tol * 0.01, False)
        new = beta.copy()
        t = 1.0
        while True:
            cand = old + t * (new - old)
            new_obj = cox_objective(Z, time, event, cand, lam, risk)
            if new_obj <= obj + 1e-12 * abs(obj) or t < 1e-8:
                break
            t *= 0.5
        beta[:] = cand
        obj = new_obj
        change = float(np.max(np.abs(beta - old), initial=0.0))
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta), initial=0.0) > 1e6:
            beta[:] = old
            return False, sweeps
        if change < tol:
            return True, sweeps
    return False, sweeps


# ---------------------------------------------------------------------------
# Dispatch, KKT and support matching
# ---------------------------------------------------------------------------


def lasso_path(d: Dataset, lambdas=None, count: int = DEFAULT_LAMBDA_COUNT, **options) -> LambdaPath:
    """LASSO path for the family matching the outcome kind."""
    kind = d.outcome.kind
    if kind == CONTINUOUS:
        return lasso_linear(d, lambdas, count, **options)
    if kind == BINARY:
        return lasso_logistic(d, lambdas, count, **options)
    return lasso_cox(d, lambdas, count, **options)


def loss_gradient(path: LambdaPath, d: Dataset, k: int) -> np.ndarray:
    """Gradient of the unpenalized loss (as written) w.r.t. the penalized coefficients."""
    Z, _ = design_matrix(d, range(d.p))
    Z = Z * np.asarray(d.candidate_mask, dtype=bool)[path.owner]
    eta = path.linear_predictor(Z, k)
    o = d.outcome
    if path.family == LINEAR:
        return -2.0 * Z.T @ (o.y - eta)
    if path.family == LOGISTIC:
        return -Z.T @ (o.y - expit(eta))
    cum = breslow_cumulative_hazard(eta, o.time, o.event)
    return -Z.T @ (o.event - cum * np.exp(eta))


def kkt_violation(path: LambdaPath, d: Dataset, k: int) -> float:
    """Largest subgradient-condition violation at path point ``k``."""
    grad = loss_gradient(path, d, k)
    b = path.beta[k]
    lam = path.lambdas[k]
    active = b != 0
    v_active = np.abs(grad[active] + lam * np.sign(b[active]))
    v_inactive = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(max(np.max(v_active, initial=0.0), np.max(v_inactive, initial=0.0)))


def match_support_size(path: LambdaPath, target: int) -> int:
    """Path index whose support size is closest to ``target``; ties go to the larger penalty."""
    gaps = np.abs(np.asarray(path.support_sizes) - int(target))
    return int(np.argmin(gaps))
