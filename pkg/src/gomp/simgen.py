"""Synthetic sparse linear data with a known generating support."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .datamodel import BINARY, CATEGORICAL, CONTINUOUS, Dataset, Outcome, discretize_quantiles, write_csv
from .errors import UsageError

LOGISTIC_LINK = "logistic"
LATENT_THRESHOLD = "latent-threshold"
# variance of the standardized linear predictor in binary generation
BINARY_ETA_VAR = 4.0


@dataclass(frozen=True)
class SimSpec:
    """Generative parameters.

    Nonzero coefficients are drawn as ``sign * U[coef_low, coef_high]`` with
    a random sign. ``snr`` is Var(signal) / Var(noise); ``math.inf`` gives a
    noiseless outcome.
    """

    n: int
    p: int
    n_true: int = 10
    snr: float = 32.5
    outcome_kind: str = CONTINUOUS
    coef_low: float = 0.5
    coef_high: float = 1.5
    categorical_fraction: float = 0.0
    binary_mode: str = LOGISTIC_LINK
    seed: int = 0

    def __post_init__(self):
        if self.n < 3 or self.p < 1:
            raise UsageError("need n >= 3 and p >= 1")
        if not 0 <= self.n_true <= self.p:
            raise UsageError("n_true must lie in [0, p]")
        if not self.snr > 0:
            raise UsageError("snr must be > 0")
        if self.outcome_kind not in (CONTINUOUS, BINARY):
            raise UsageError("simulated outcomes are continuous or binary")
        if not 0 <= self.coef_low <= self.coef_high:
            raise UsageError("need 0 <= coef_low <= coef_high")
        if not 0.0 <= self.categorical_fraction <= 1.0:
            raise UsageError("categorical_fraction must lie in [0, 1]")
        if self.binary_mode not in (LOGISTIC_LINK, LATENT_THRESHOLD):
            raise UsageError(f"unknown binary mode {self.binary_mode!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["snr"] = "inf" if math.isinf(self.snr) else self.snr
        return out


@dataclass(frozen=True)
class Truth:
    support: tuple[int, ...]
    coefficients: tuple[float, ...]
    sigma: float
    realized_snr: float
    categorical: tuple[int, ...] = ()
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["support"] = list(self.support)
        out["coefficients"] = list(self.coefficients)
        out["categorical"] = list(self.categorical)
        out["realized_snr"] = "inf" if math.isinf(self.realized_snr) else self.realized_snr
        return out


def generate(spec: SimSpec) -> tuple[Dataset, Truth]:
    """Draw one dataset and its generating support."""
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    X = rng.standard_normal((n, p))
    support = np.sort(rng.choice(p, size=spec.n_true, replace=False))
    signs = rng.choice([-1.0, 1.0], size=spec.n_true)
    beta = signs * rng.uniform(spec.coef_low, spec.coef_high, size=spec.n_true)
    eta = X[:, support] @ beta
    noise = rng.standard_normal(n)
    var_eta = float(np.var(eta, ddof=1)) if spec.n_true else 0.0

    if spec.outcome_kind == CONTINUOUS:
        if spec.n_true == 0:
            sigma, realized = 1.0, 0.0
        elif math.isinf(spec.snr):
            sigma, realized = 0.0, math.inf
        else:
            sigma = math.sqrt(var_eta / spec.snr)
            realized = var_eta / sigma**2
        outcome = Outcome.continuous(eta + sigma * noise)
    else:
        z = np.zeros(n) if var_eta == 0 else (eta - eta.mean()) * math.sqrt(BINARY_ETA_VAR / var_eta)
        if spec.binary_mode == LOGISTIC_LINK:
            y = (rng.uniform(size=n) < expit(z)).astype(float)
            sigma = 0.0
        else:
            sigma = 0.0 if math.isinf(spec.snr) else math.sqrt(BINARY_ETA_VAR / spec.snr)
            y = (z + sigma * noise > 0).astype(float)
        if y.min() == y.max():
            raise UsageError("simulated binary outcome has a single class; change the seed or n")
        realized = math.inf if sigma == 0 else BINARY_ETA_VAR / sigma**2
        outcome = Outcome.binary(y)

    n_cat = int(round(spec.categorical_fraction * p))
    cat = np.sort(rng.choice(p, size=n_cat, replace=False)) if n_cat else np.zeros(0, int)
    for j in cat:
        X[:, j] = discretize_quantiles(X[:, j])
    kinds = [CONTINUOUS] * p
    levels = np.zeros(p, dtype=int)
    for j in cat:
        kinds[j] = CATEGORICAL
        levels[j] = 3
    d = Dataset(
        X=X,
        names=tuple(f"x{j}" for j in range(p)),
        kinds=tuple(kinds),
        level_counts=levels,
        outcome=outcome,
    )
    truth = Truth(
        support=tuple(int(j) for j in support),
        coefficients=tuple(float(b) for b in beta),
        sigma=float(sigma),
        realized_snr=float(realized),
        categorical=tuple(int(j) for j in cat),
        spec=spec.to_dict(),
    )
    return d, truth


def write_simulation(d: Dataset, truth: Truth, out_dir, stem: str = "sim") -> dict:
    """Write ``<stem>.csv``, ``<stem>.schema.json`` and ``<stem>.truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "data": out / f"{stem}.csv",
        "schema": out / f"{stem}.schema.json",
        "truth": out / f"{stem}.truth.json",
    }
    write_csv(d, paths["data"], paths["schema"])
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}
