"""Datasets with role-tagged columns, fold planning and simulated draws."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import DataError, SchemaError

ROLES = ("outcome", "indicator", "regressors", "covariates", "auxiliary", "draw")


@dataclass(frozen=True)
class Schema:
    """Mapping from semantic role to column references.

    References may be integer positions or column names; they are resolved
    against a header with :meth:`resolve`.
    """

    roles: Mapping[str, Sequence[int | str]] = field(default_factory=dict)

    def __post_init__(self):
        normalized = {}
        for role, refs in dict(self.roles).items():
            if role not in ROLES:
                raise SchemaError(f"unknown role {role!r}; expected one of {ROLES}")
            if isinstance(refs, (int, str)):
                refs = [refs]
            normalized[role] = tuple(refs)
        object.__setattr__(self, "roles", normalized)

    def resolve(self, columns: Sequence[str]) -> dict[str, tuple[int, ...]]:
        """Return role -> column positions, validated against ``columns``."""
        index = {name: i for i, name in enumerate(columns)}
        resolved = {}
        seen = {}
        for role, refs in self.roles.items():
            positions = []
            for ref in refs:
                if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
                    if not 0 <= ref < len(columns):
                        raise SchemaError(
                            f"role {role!r} references column {ref}, but the data has "
                            f"{len(columns)} columns"
                        )
                    pos = int(ref)
                elif isinstance(ref, str):
                    if ref not in index:
                        raise SchemaError(f"role {role!r} references unknown column {ref!r}")
                    pos = index[ref]
                else:
                    raise SchemaError(f"role {role!r} has invalid column reference {ref!r}")
                if pos in seen and seen[pos] != role:
                    raise SchemaError(
                        f"column {columns[pos]!r} is assigned to both {seen[pos]!r} and {role!r}"
                    )
                seen[pos] = role
                positions.append(pos)
            resolved[role] = tuple(positions)
        return resolved

    def to_dict(self):
        return {role: list(refs) for role, refs in self.roles.items()}


class Dataset:
    """Immutable n x width real table with named, role-tagged columns."""

    def __init__(self, values, columns: Sequence[str], schema: Schema | None = None):
        values = np.array(values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError("values must be a 2-d array")
        columns = tuple(str(c) for c in columns)
        if len(columns) != values.shape[1]:
            raise DataError(f"{len(columns)} column names for {values.shape[1]} columns")
        if len(set(columns)) != len(columns):
            raise DataError("column names must be unique")
        if np.isnan(values).any():
            row, col = np.argwhere(np.isnan(values))[0]
            raise DataError(f"missing value at row {row + 1}, column {columns[col]!r}")
        values.setflags(write=False)
        self._values = values
        self.columns = columns
        self.schema = schema if schema is not None else Schema()
        self.role_index = self.schema.resolve(columns)
        self._index = {name: i for i, name in enumerate(columns)}

    @classmethod
    def from_frame(cls, frame, schema: Schema | None = None) -> "Dataset":
        return cls(frame.to_numpy(dtype=float), list(frame.columns), schema)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def width(self) -> int:
        return self._values.shape[1]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Dataset(n={self.n}, columns={list(self.columns)})"

    def position(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}; available: {list(self.columns)}") from None

    def col(self, name: str) -> np.ndarray:
        return self._values[:, self.position(name)]

    def block(self, names: Sequence[str]) -> np.ndarray:
        return self._values[:, [self.position(n) for n in names]]

    def role(self, role: str) -> tuple[str, ...]:
        """Column names bound to ``role`` (empty if unbound)."""
        return tuple(self.columns[i] for i in self.role_index.get(role, ()))

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self._values[rows], self.columns, self.schema)

    def with_column(self, name: str, values, role: str | None = None) -> "Dataset":
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape[0] != self.n:
            raise DataError(f"new column has {values.shape[0]} rows, dataset has {self.n}")
        roles = {r: list(refs) for r, refs in self.schema.roles.items()}
        if role is not None:
            roles.setdefault(role, []).append(name)
        return Dataset(
            np.column_stack([self._values, values]), self.columns + (name,), Schema(roles)
        )

    def to_csv(self, path) -> None:
        """Write with a header row; values use ``repr`` so they round-trip exactly."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self._values:
                writer.writerow([repr(float(v)) for v in row])


def load_csv(path, schema: Schema | None = None) -> Dataset:
    """Read a headered, comma-separated numeric file into a :class:`Dataset`."""
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise DataError(
                    f"row {lineno} has {len(record)} cells, header has {len(header)}"
                )
            parsed = []
            for name, cell in zip(header, record):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"non-numeric cell {cell!r} at row {lineno}, column {name!r}"
                    ) from None
                if math.isnan(value):
                    raise DataError(f"missing value at row {lineno}, column {name!r}")
                parsed.append(value)
            rows.append(parsed)
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return Dataset(values, header, schema)


@dataclass(frozen=True)
class FoldPlan:
    """Partition of ``range(n)`` into ``L`` folds.

    ``assignment[i]`` is the (0-based) fold of row ``i``. With double
    cross-fitting, ``half_assignment[i]`` is 0 (half A) or 1 (half B); the
    complement of every fold is split by this label.
    """

    L: int
    assignment: np.ndarray
    double_crossfit: bool = False
    half_assignment: np.ndarray | None = None
    seed: int = 0

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def fold(self, ell: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == ell)

    def complement(self, ell: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != ell)

    def training_rows(self, ell: int) -> tuple[np.ndarray, np.ndarray]:
        """Rows used for the regression and for the debiasing learner of fold ``ell``."""
        out = self.complement(ell)
        if not self.double_crossfit:
            return out, out
        half = self.half_assignment[out]
        return out[half == 0], out[half == 1]


def make_folds(n: int, L: int, seed: int = 0, double_crossfit: bool = False) -> FoldPlan:
    """Shuffle with a counter-based generator, then deal round-robin."""
    if L < 2 or L > n:
        raise ValueError(f"need 2 <= L <= n, got L={L}, n={n}")
    rng = np.random.Generator(np.random.Philox(seed))
    perm = rng.permutation(n)
    position = np.empty(n, dtype=np.int64)
    position[perm] = np.arange(n)
    assignment = position % L
    half = (position // L) % 2 if double_crossfit else None
    return FoldPlan(L, assignment, double_crossfit, half, seed)


@dataclass(frozen=True)
class DensitySpec:
    """A known density for simulated draws: Gaussian or uniform."""

    kind: str = "gaussian"
    mean: float = 0.0
    sd: float = 1.0
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.sd > 0:
                raise ValueError("gaussian density needs sd > 0")
        elif self.kind == "uniform":
            if not self.high > self.low:
                raise ValueError("uniform density needs high > low")
        else:
            raise ValueError(f"unsupported density {self.kind!r}; use 'gaussian' or 'uniform'")

    @classmethod
    def from_dict(cls, spec: Mapping) -> "DensitySpec":
        return cls(**dict(spec))

    def to_dict(self):
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean, "sd": self.sd}
        return {"kind": "uniform", "low": self.low, "high": self.high}

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(self.mean, self.sd, size)
        return rng.uniform(self.low, self.high, size)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            z = (u - self.mean) / self.sd
            return np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))
        inside = (u >= self.low) & (u <= self.high)
        return np.where(inside, 1.0 / (self.high - self.low), 0.0)

    def score(self, u):
        """Negative score ``-pdf'(u) / pdf(u)``."""
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return (u - self.mean) / self.sd**2
        return np.zeros_like(u)


def attach_simulated_draws(
    ds: Dataset, sampler: DensitySpec | Mapping, seed: int = 0, name: str = "draw"
) -> Dataset:
    """Append one column of i.i.d. draws from ``sampler`` with role ``draw``."""
    if not isinstance(sampler, DensitySpec):
        sampler = DensitySpec.from_dict(sampler)
    rng = np.random.default_rng(seed)
    return ds.with_column(name, sampler.sample(rng, ds.n), role="draw")
