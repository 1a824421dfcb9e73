"""In-memory dataset of (U, X, Y) records with typed proxy columns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidLevel, SchemaError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Column:
    """One proxy column of X.

    Continuous columns hold floats. Categorical columns hold integer level
    codes in ``[0, len(levels))``; ``levels`` keeps the original labels.
    """

    name: str
    kind: str
    values: np.ndarray
    levels: tuple | None = None

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            v = np.asarray(self.values, dtype=float)
            if not np.all(np.isfinite(v)):
                raise SchemaError(f"column {self.name!r} has missing or non-finite values")
        elif self.kind == CATEGORICAL:
            v = np.asarray(self.values)
            if v.size and not np.all(v == np.round(v)):
                raise SchemaError(f"column {self.name!r} has non-integer level codes")
            v = v.astype(int)
            levels = self.levels
            if levels is None:
                levels = tuple(str(i) for i in range(int(v.max()) + 1 if v.size else 0))
            object.__setattr__(self, "levels", tuple(levels))
            if v.size and (v.min() < 0 or v.max() >= len(self.levels)):
                raise InvalidLevel(f"column {self.name!r} has codes outside [0, {len(self.levels)})")
        else:
            raise SchemaError(f"unknown column type {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def cardinality(self) -> int:
        return len(self.levels) if self.kind == CATEGORICAL else 0

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    def take(self, idx) -> "Column":
        return Column(self.name, self.kind, self.values[idx], self.levels)


def continuous(name, values) -> Column:
    return Column(name, CONTINUOUS, values)


def categorical(name, codes, levels=None) -> Column:
    return Column(name, CATEGORICAL, codes, levels)


@dataclass(frozen=True)
class Dataset:
    """Observed records: covariates ``u`` (n, d_U), proxies ``x_columns``, target ``y``.

    ``true_z`` optionally carries simulated class labels, coded ``0..K-1``.
    """

    u: np.ndarray
    x_columns: tuple
    y: np.ndarray
    true_z: np.ndarray | None = None
    u_names: tuple = field(default=())
    y_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        if n == 0:
            raise SchemaError("dataset has no rows")
        if not np.all(np.isfinite(y)):
            raise SchemaError("target has missing or non-finite values")
        u = np.asarray(self.u, dtype=float)
        u = np.zeros((n, 0)) if u.size == 0 else u.reshape(n, -1)
        if not np.all(np.isfinite(u)):
            raise SchemaError("covariates have missing or non-finite values")
        cols = tuple(self.x_columns)
        for c in cols:
            if len(c.values) != n:
                raise SchemaError(f"column {c.name!r} has {len(c.values)} rows, expected {n}")
        names = tuple(self.u_names) or tuple(f"u{j + 1}" for j in range(u.shape[1]))
        if len(names) != u.shape[1]:
            raise SchemaError("u_names does not match the number of covariates")
        z = self.true_z
        if z is not None:
            z = np.asarray(z).astype(int).ravel()
            if z.size != n:
                raise SchemaError("true_z length differs from n")
            z.setflags(write=False)
        y.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x_columns", cols)
        object.__setattr__(self, "true_z", z)
        object.__setattr__(self, "u_names", names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d_u(self) -> int:
        return self.u.shape[1]

    @property
    def d_x(self) -> int:
        return len(self.x_columns)

    @property
    def continuous_mask(self) -> np.ndarray:
        return np.array([c.is_continuous for c in self.x_columns], dtype=bool)

    @property
    def all_continuous(self) -> bool:
        return bool(np.all(self.continuous_mask))

    @property
    def x(self) -> np.ndarray:
        """X as an (n, d_X) float array; categorical columns appear as their codes."""
        if not self.x_columns:
            return np.zeros((self.n, 0))
        return np.column_stack([np.asarray(c.values, dtype=float) for c in self.x_columns])

    @property
    def x_names(self) -> tuple:
        return tuple(c.name for c in self.x_columns)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.u[idx],
            tuple(c.take(idx) for c in self.x_columns),
            self.y[idx],
            None if self.true_z is None else self.true_z[idx],
            self.u_names,
            self.y_name,
        )

    def without_labels(self) -> "Dataset":
        return Dataset(self.u, self.x_columns, self.y, None, self.u_names, self.y_name)


def from_arrays(u, x, y, true_z=None, categorical_levels=None) -> Dataset:
    """Build a dataset with all-continuous X, or mark some columns categorical.

    ``categorical_levels`` maps a column index to its number of levels.
    """
    x = np.asarray(x, dtype=float)
    n = np.asarray(y).size
    x = x.reshape(n, -1)
    categorical_levels = categorical_levels or {}
    cols = []
    for j in range(x.shape[1]):
        name = f"x{j + 1}"
        if j in categorical_levels:
            cols.append(categorical(name, x[:, j], tuple(str(i) for i in range(categorical_levels[j]))))
        else:
            cols.append(continuous(name, x[:, j]))
    return Dataset(u, tuple(cols), y, true_z)


def check_responsibilities(t, atol=1e-10) -> np.ndarray:
    """Validate an (n, K) matrix of posterior class probabilities."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 2:
        raise ValueError("responsibilities must be a 2-d array")
    if np.any(t < -atol) or np.any(t > 1 + atol):
        raise ValueError("responsibilities must lie in [0, 1]")
    if not np.allclose(t.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise ValueError("responsibility rows must sum to one")
    return t
