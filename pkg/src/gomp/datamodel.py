"""Typed dataset container, CSV ingestion and standardization.

Features are stored column-wise in one dense float matrix. Categorical
columns hold their integer level codes (as floats) and are only expanded to
dummy columns when a model is fitted, see :func:`design_matrix`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import IngestionError, UsageError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
BINARY = "binary"
SURVIVAL = "survival"

OUTCOME_KINDS = (CONTINUOUS, BINARY, SURVIVAL)
ROLES = (
    "feature-continuous",
    "feature-categorical",
    "outcome",
    "time",
    "event",
    "ignore",
)
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureColumn:
    """A single feature, as seen by the association tests."""

    name: str
    kind: str
    values: np.ndarray
    level_count: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.kind == CONTINUOUS:
            if not np.all(np.isfinite(values)):
                raise UsageError(f"continuous column {self.name!r} has non-finite values")
        elif self.kind == CATEGORICAL:
            if self.level_count < 2:
                raise UsageError(f"categorical column {self.name!r} needs level_count >= 2")
            if np.any(values != np.round(values)) or np.any(values < 0) or np.any(
                values >= self.level_count
            ):
                raise UsageError(f"categorical column {self.name!r} has invalid level codes")
        else:
            raise UsageError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "values", _frozen(values))


@dataclass(frozen=True)
class Outcome:
    """Continuous, binary (0/1) or right-censored survival outcome."""

    kind: str
    y: np.ndarray | None = None
    time: np.ndarray | None = None
    event: np.ndarray | None = None
    names: tuple[str, ...] = ("y",)
    # row subsets (CV test folds) may legitimately hold one class
    require_both_classes: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise UsageError(f"unknown outcome kind {self.kind!r}")
        if self.kind == SURVIVAL:
            if self.time is None or self.event is None:
                raise UsageError("survival outcome needs time and event")
            time = _frozen(self.time)
            event = _frozen(self.event)
            if time.shape != event.shape or time.ndim != 1:
                raise UsageError("time and event must be vectors of equal length")
            if not np.all(np.isfinite(time)) or np.any(time <= 0):
                raise UsageError("survival times must be finite and strictly positive")
            if not np.all((event == 0) | (event == 1)):
                raise UsageError("event indicator must be 0/1")
            object.__setattr__(self, "time", time)
            object.__setattr__(self, "event", event)
            if len(self.names) != 2:
                object.__setattr__(self, "names", ("time", "event"))
        else:
            if self.y is None:
                raise UsageError(f"{self.kind} outcome needs y")
            y = _frozen(self.y)
            if y.ndim != 1 or not np.all(np.isfinite(y)):
                raise UsageError("outcome must be a finite vector")
            if self.kind == BINARY:
                if not np.all((y == 0) | (y == 1)):
                    raise UsageError("binary outcome must be coded 0/1")
                if self.require_both_classes and y.min() == y.max():
                    raise UsageError("binary outcome needs both classes")
            object.__setattr__(self, "y", y)

    @classmethod
    def continuous(cls, y, name="y"):
        return cls(CONTINUOUS, y=y, names=(name,))

    @classmethod
    def binary(cls, y, name="y"):
        return cls(BINARY, y=y, names=(name,))

    @classmethod
    def survival(cls, time, event, names=("time", "event")):
        return cls(SURVIVAL, time=time, event=event, names=tuple(names))

    @property
    def n(self) -> int:
        return len(self.time if self.kind == SURVIVAL else self.y)

    def take(self, rows) -> "Outcome":
        if self.kind == SURVIVAL:
            return replace(self, time=self.time[rows], event=self.event[rows])
        return replace(self, y=self.y[rows], require_both_classes=False)


@dataclass(frozen=True)
class Dataset:
    """Design matrix plus outcome; immutable after construction.

    Attributes
    ----------
    X : ndarray, shape (n, p)
        Continuous values, or level codes for categorical columns.
    names : tuple of str
        Unique feature names.
    kinds : tuple of str
        ``"continuous"`` or ``"categorical"`` per column.
    level_counts : ndarray of int
        Number of levels for categorical columns, 0 for continuous ones.
    outcome : Outcome
    level_labels : tuple
        Original tokens of each categorical level (``None`` for continuous
        columns); used when writing the dataset back to CSV.
    candidate_mask : ndarray of bool
        Columns eligible for selection. :func:`standardize` clears the flag
        on constant columns.
    """

    X: np.ndarray
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    level_counts: np.ndarray
    outcome: Outcome
    level_labels: tuple = ()
    candidate_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim != 2:
            raise UsageError("X must be a 2-D matrix")
        n, p = X.shape
        if len(self.names) != p or len(self.kinds) != p:
            raise UsageError("names/kinds must have one entry per column")
        if len(set(self.names)) != p:
            raise UsageError("feature names must be unique")
        if self.outcome.n != n:
            raise UsageError("outcome length differs from the number of rows")
        levels = _frozen(self.level_counts, dtype=int)
        kinds = tuple(self.kinds)
        cat = np.array([k == CATEGORICAL for k in kinds], dtype=bool)
        if np.any(~cat & (levels != 0)) or np.any(cat & (levels < 2)):
            raise UsageError("level_counts inconsistent with kinds")
        if not np.all(np.isfinite(X)):
            raise UsageError("X contains non-finite values")
        if np.any(cat):
            codes = X[:, cat]
            if np.any(codes != np.round(codes)) or np.any(codes < 0) or np.any(
                codes >= levels[cat]
            ):
                raise UsageError("categorical level codes out of range")
        labels = tuple(self.level_labels) if self.level_labels else (None,) * p
        if len(labels) != p:
            raise UsageError("level_labels must have one entry per column")
        mask = np.ones(p, dtype=bool) if self.candidate_mask is None else self.candidate_mask
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "level_counts", levels)
        object.__setattr__(self, "level_labels", labels)
        object.__setattr__(self, "candidate_mask", _frozen(mask, dtype=bool))

    @classmethod
    def from_columns(cls, columns: Sequence[FeatureColumn], outcome: Outcome) -> "Dataset":
        X = np.column_stack([c.values for c in columns]) if columns else np.empty((outcome.n, 0))
        return cls(
            X=X,
            names=tuple(c.name for c in columns),
            kinds=tuple(c.kind for c in columns),
            level_counts=np.array([c.level_count for c in columns], dtype=int),
            outcome=outcome,
        )

    @classmethod
    def from_arrays(cls, X, outcome: Outcome, names=None, categorical=None) -> "Dataset":
        """Build a dataset from a numeric matrix.

        ``categorical`` lists column indices holding level codes; their level
        count is taken as ``max(code) + 1``.
        """
        X = np.asarray(X, dtype=float)
        p = X.shape[1]
        names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
        kinds = [CONTINUOUS] * p
        levels = np.zeros(p, dtype=int)
        for j in categorical or ():
            kinds[j] = CATEGORICAL
            levels[j] = int(X[:, j].max()) + 1
        return cls(X=X, names=names, kinds=tuple(kinds), level_counts=levels, outcome=outcome)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([k == CATEGORICAL for k in self.kinds], dtype=bool)

    def column(self, j: int) -> FeatureColumn:
        return FeatureColumn(self.names[j], self.kinds[j], self.X[:, j], int(self.level_counts[j]))

    @property
    def features(self) -> list[FeatureColumn]:
        return [self.column(j) for j in range(self.p)]

    def take(self, rows) -> "Dataset":
        """Row subset (used for CV folds and bootstrap samples)."""
        rows = np.asarray(rows)
        return replace(self, X=self.X[rows], outcome=self.outcome.take(rows))

    def select_features(self, cols) -> "Dataset":
        cols = np.asarray(cols, dtype=int)
        return Dataset(
            X=self.X[:, cols],
            names=tuple(self.names[j] for j in cols),
            kinds=tuple(self.kinds[j] for j in cols),
            level_counts=self.level_counts[cols],
            outcome=self.outcome,
            level_labels=tuple(self.level_labels[j] for j in cols),
            candidate_mask=self.candidate_mask[cols],
        )


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationRecord:
    """Per-column centering and scaling learned on one dataset.

    ``scale`` is the Euclidean norm of the centered column; categorical
    columns carry mean 0 and scale 1. ``constant`` flags continuous columns
    with zero variance (left centered, excluded from candidacy).
    """

    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0

    def apply(self, d: Dataset) -> Dataset:
        """Transform another dataset (e.g. a test fold) with these statistics."""
        X = (d.X - self.mean) / self.scale
        outcome = d.outcome
        if outcome.kind == CONTINUOUS:
            outcome = replace(outcome, y=(outcome.y - self.y_mean) / self.y_scale)
        return replace(
            d,
            X=X,
            outcome=outcome,
            candidate_mask=np.asarray(d.candidate_mask) & ~self.constant,
        )

    def inverse_outcome(self, y):
        """Map standardized continuous predictions back to the original scale."""
        return np.asarray(y) * self.y_scale + self.y_mean

    @property
    def excluded(self) -> list[int]:
        return [int(j) for j in np.nonzero(self.constant)[0]]


def _center_scale(col):
    mu = col.mean()
    c = col - mu
    norm = math.sqrt(float(c @ c))
    constant = norm <= 1e-12 * max(1.0, math.sqrt(float(col @ col)))
    return mu, (1.0 if constant else norm), constant


def standardize(d: Dataset) -> tuple[Dataset, StandardizationRecord]:
    """Center continuous columns (and a continuous outcome) and scale to unit norm."""
    p = d.p
    mean = np.zeros(p)
    scale = np.ones(p)
    constant = np.zeros(p, dtype=bool)
    for j in np.nonzero(~d.is_categorical)[0]:
        mean[j], scale[j], constant[j] = _center_scale(d.X[:, j])
    y_mean, y_scale = 0.0, 1.0
    if d.outcome.kind == CONTINUOUS:
        y_mean, y_scale, _ = _center_scale(d.outcome.y)
    record = StandardizationRecord(
        mean=_frozen(mean),
        scale=_frozen(scale),
        constant=_frozen(constant, dtype=bool),
        y_mean=float(y_mean),
        y_scale=float(y_scale),
    )
    return record.apply(d), record


def design_matrix(d: Dataset, cols: Sequence[int], X=None):
    """Expand the selected columns to a numeric design (no intercept column).

    Categorical columns become ``level_count - 1`` dummies with level 0 as the
    reference. Returns ``(Z, owner)`` where ``owner[k]`` is the feature index
    that produced design column ``k``. ``X`` overrides ``d.X`` (same layout),
    which lets predictions reuse the training dataset's column metadata.
    """
    X = d.X if X is None else X
    blocks = []
    owner = []
    for j in cols:
        if d.kinds[j] == CATEGORICAL:
            codes = X[:, j]
            for level in range(1, int(d.level_counts[j])):
                blocks.append((codes == level).astype(float))
                owner.append(j)
        else:
            blocks.append(X[:, j])
            owner.append(j)
    Z = np.column_stack(blocks) if blocks else np.empty((X.shape[0], 0))
    return Z, np.array(owner, dtype=int)


def discretize_quantiles(x, probs=(0.33, 0.66)) -> np.ndarray:
    """Integer level codes from quantile cut points.

    Intervals are left-closed: a value equal to a cut point goes to the
    upper level.
    """
    x = np.asarray(x, dtype=float)
    cuts = np.quantile(x, probs)
    return np.searchsorted(cuts, x, side="right").astype(float)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """Column roles for :func:`load_csv`.

    ``roles`` maps column name to one of :data:`ROLES`. Columns absent from
    the mapping default to ``default_role``. ``outcome_kind`` says whether a
    plain ``outcome`` column is continuous or binary.
    """

    roles: Mapping[str, str]
    outcome_kind: str | None = None
    default_role: str = "feature-continuous"

    def __post_init__(self):
        for name, role in self.roles.items():
            if role not in ROLES:
                raise UsageError(f"unknown role {role!r} for column {name!r}")
        if self.default_role not in ROLES:
            raise UsageError(f"unknown default role {self.default_role!r}")

    def to_json(self) -> dict:
        out = {"columns": dict(self.roles), "default_role": self.default_role}
        if self.outcome_kind is not None:
            out["outcome_kind"] = self.outcome_kind
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Schema":
        if "columns" not in obj:
            raise UsageError("schema JSON needs a 'columns' mapping")
        return cls(
            roles=dict(obj["columns"]),
            outcome_kind=obj.get("outcome_kind"),
            default_role=obj.get("default_role", "feature-continuous"),
        )


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def _parse_float(token, row, column):
    if token.strip().lower() in MISSING_TOKENS:
        raise IngestionError("missing value", row=row, column=column)
    try:
        value = float(token)
    except ValueError:
        raise IngestionError(f"non-numeric token {token!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise IngestionError(f"non-finite value {token!r}", row=row, column=column)
    return value


def load_csv(path, schema: Schema) -> Dataset:
    """Read a comma-separated, header-first, UTF-8 file into a :class:`Dataset`."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError("empty file")
    header = rows[0]
    body = rows[1:]
    if len(set(header)) != len(header):
        raise IngestionError("duplicate column names in header", row=1)
    unknown = set(schema.roles) - set(header)
    if unknown:
        raise UsageError(f"schema names columns not in file: {sorted(unknown)}")
    roles = [schema.roles.get(h, schema.default_role) for h in header]
    for r, line in enumerate(body, start=2):
        if len(line) != len(header):
            raise IngestionError(f"expected {len(header)} fields, got {len(line)}", row=r)
    outcome_cols = [i for i, role in enumerate(roles) if role == "outcome"]
    time_cols = [i for i, role in enumerate(roles) if role == "time"]
    event_cols = [i for i, role in enumerate(roles) if role == "event"]
    if outcome_cols and (time_cols or event_cols):
        raise UsageError("schema mixes an outcome column with time/event columns")
    if outcome_cols:
        if len(outcome_cols) != 1:
            raise UsageError("schema must name exactly one outcome column")
        kind = schema.outcome_kind or CONTINUOUS
        if kind not in (CONTINUOUS, BINARY):
            raise UsageError(f"outcome_kind {kind!r} needs a single outcome column")
    elif len(time_cols) == 1 and len(event_cols) == 1:
        kind = SURVIVAL
    else:
        raise UsageError("schema must name one outcome column or one time + one event column")

    def numeric(i):
        return np.array([_parse_float(line[i], r, header[i]) for r, line in enumerate(body, 2)])

    if kind == SURVIVAL:
        ti, ei = time_cols[0], event_cols[0]
        time = numeric(ti)
        bad = np.nonzero(time <= 0)[0]
        if bad.size:
            raise IngestionError("survival time must be > 0", row=int(bad[0]) + 2, column=header[ti])
        event = numeric(ei)
        bad = np.nonzero((event != 0) & (event != 1))[0]
        if bad.size:
            raise IngestionError("event must be 0 or 1", row=int(bad[0]) + 2, column=header[ei])
        outcome = Outcome.survival(time, event, names=(header[ti], header[ei]))
    else:
        oi = outcome_cols[0]
        y = numeric(oi)
        if kind == BINARY:
            bad = np.nonzero((y != 0) & (y != 1))[0]
            if bad.size:
                raise IngestionError("binary outcome must be 0 or 1", row=int(bad[0]) + 2, column=header[oi])
            if y.min() == y.max():
                raise IngestionError("binary outcome has a single class", column=header[oi])
        outcome = Outcome(kind, y=y, names=(header[oi],))

    columns, labels = [], []
    for i, role in enumerate(roles):
        if role == "feature-continuous":
            columns.append(FeatureColumn(header[i], CONTINUOUS, numeric(i)))
            labels.append(None)
        elif role == "feature-categorical":
            codes, seen = [], {}
            for r, line in enumerate(body, 2):
                token = line[i]
                if token.strip().lower() in MISSING_TOKENS:
                    raise IngestionError("missing value", row=r, column=header[i])
                codes.append(seen.setdefault(token, len(seen)))
            if len(seen) < 2:
                raise IngestionError("categorical column has fewer than 2 levels", column=header[i])
            columns.append(FeatureColumn(header[i], CATEGORICAL, np.array(codes, float), len(seen)))
            labels.append(tuple(seen))
    d = Dataset.from_columns(columns, outcome)
    return replace(d, level_labels=tuple(labels))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(d: Dataset, path, schema_path=None) -> Schema:
    """Write ``d`` in the CSV dialect read by :func:`load_csv`.

    Returns the matching :class:`Schema`; also writes it as JSON when
    ``schema_path`` is given.
    """
    o = d.outcome
    header = list(o.names) + list(d.names)
    roles = {}
    if o.kind == SURVIVAL:
        roles[o.names[0]] = "time"
        roles[o.names[1]] = "event"
        outcome_cols = [o.time, o.event]
    else:
        roles[o.names[0]] = "outcome"
        outcome_cols = [o.y]
    if len(set(header)) != len(header):
        raise UsageError("outcome names collide with feature names")
    for j, name in enumerate(d.names):
        roles[name] = "feature-categorical" if d.kinds[j] == CATEGORICAL else "feature-continuous"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            row = []
            for k, col in enumerate(outcome_cols):
                v = col[i]
                if o.kind == BINARY or (o.kind == SURVIVAL and k == 1):
                    row.append(str(int(v)))
                else:
                    row.append(_fmt(v))
            for j in range(d.p):
                v = d.X[i, j]
                if d.kinds[j] == CATEGORICAL:
                    labels = d.level_labels[j]
                    row.append(labels[int(v)] if labels else str(int(v)))
                else:
                    row.append(_fmt(v))
            w.writerow(row)
    schema = Schema(roles=roles, outcome_kind=None if o.kind == SURVIVAL else o.kind)
    if schema_path is not None:
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump(schema.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return schema
