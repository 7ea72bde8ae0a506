"""Entity-by-time panel container and the column transformations applied to it.

A :class:`PanelDataset` is immutable: every transformation returns a new
dataset.  Missing cells are NaN in float columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ImputationError,
    IntegrityError,
    MissingValuesError,
    NamingError,
    SchemaError,
)

__all__ = [
    "ColumnSchema",
    "PanelDataset",
    "load_csv",
    "impute",
    "add_lag",
    "lag_values",
    "add_entity_mean",
    "drop_missing_rows",
    "filter_min_periods",
]


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for one estimation run.

    Derived columns follow a fixed naming convention: ``<name>_lag`` for the
    one-period lag, ``<name>_lag2``/``<name>_lag3`` for the deeper GMM
    instruments and ``<name>_mean`` for entity means.  Proxy means are taken
    over the lagged proxy, so ``<proxy>_mean`` is the entity mean of
    ``<proxy>_lag``.
    """

    outcome: str = "gdp_growth"
    treatment: str = "trust"
    controls: tuple[str, ...] = ("capital", "labor", "technology")
    proxies: tuple[str, ...] = ("gov_effectiveness",)
    entity: str = "country"
    time: str = "year"

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "proxies", tuple(self.proxies))
        if self.outcome == self.treatment:
            raise ValueError("outcome and treatment must be different columns")
        names = [self.entity, self.time, self.outcome, self.treatment, *self.controls, *self.proxies]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate column names in schema: {dupes}")

    @property
    def data_columns(self) -> tuple[str, ...]:
        return (self.outcome, self.treatment, *self.controls, *self.proxies)

    @property
    def outcome_lag(self) -> str:
        return f"{self.outcome}_lag"

    @property
    def proxy_lags(self) -> tuple[str, ...]:
        return tuple(f"{p}_lag" for p in self.proxies)

    @property
    def treatment_mean(self) -> str:
        return f"{self.treatment}_mean"

    @property
    def outcome_mean(self) -> str:
        return f"{self.outcome}_mean"

    @property
    def proxy_means(self) -> tuple[str, ...]:
        return tuple(f"{p}_mean" for p in self.proxies)


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Rows sorted by (entity, time) with named float columns.

    Build instances with :meth:`from_arrays` (or :func:`load_csv`); the
    constructor assumes its inputs are already sorted and validated.
    """

    entity: np.ndarray
    time: np.ndarray
    columns: Mapping[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, entity, time, columns: Mapping[str, Sequence[float]] | None = None):
        entity = np.asarray([str(e) for e in entity], dtype=object)
        time = np.asarray(time)
        if time.dtype.kind == "f":
            if not np.all(np.isfinite(time)) or np.any(time != np.round(time)):
                raise IntegrityError("time index must contain integers")
        time = time.astype(np.int64)
        n = entity.shape[0]
        if time.shape[0] != n:
            raise IntegrityError("entity and time vectors differ in length")
        cols = {}
        for name, values in (columns or {}).items():
            v = np.asarray(values, dtype=float)
            if v.shape != (n,):
                raise IntegrityError(f"column {name!r} has length {v.shape[0]}, expected {n}")
            cols[name] = v
        order = np.lexsort((time, entity))
        entity, time = entity[order], time[order]
        if n > 1:
            same = (entity[1:] == entity[:-1]) & (time[1:] == time[:-1])
            if same.any():
                i = int(np.argmax(same))
                raise IntegrityError(f"duplicate (entity, time) key ({entity[i]}, {time[i]})")
        return cls._trusted(entity, time, {k: v[order] for k, v in cols.items()})

    @classmethod
    def _trusted(cls, entity, time, columns):
        return cls(
            _readonly(entity),
            _readonly(time),
            MappingProxyType({k: _readonly(v) for k, v in columns.items()}),
        )

    def __len__(self):
        return self.entity.shape[0]

    @property
    def n_rows(self) -> int:
        return len(self)

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def __contains__(self, name):
        return name in self.columns

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"column {name!r} not in dataset") from None

    def require(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(f"missing required column(s): {', '.join(missing)}")

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        self.require(names)
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.columns[n] for n in names])

    def groups(self):
        """Return ``(starts, stops)`` row offsets of each entity block."""
        n = len(self)
        if n == 0:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        change = np.flatnonzero(self.entity[1:] != self.entity[:-1]) + 1
        starts = np.concatenate([[0], change])
        stops = np.concatenate([change, [n]])
        return starts, stops

    def entity_codes(self) -> np.ndarray:
        starts, stops = self.groups()
        return np.repeat(np.arange(starts.shape[0]), stops - starts)

    @property
    def n_entities(self) -> int:
        return self.groups()[0].shape[0]

    def with_column(self, name: str, values, *, overwrite=False) -> "PanelDataset":
        if name in self.columns and not overwrite:
            raise NamingError(f"column {name!r} already exists")
        v = np.asarray(values, dtype=float)
        if v.shape != (len(self),):
            raise IntegrityError(f"column {name!r} has wrong length")
        cols = dict(self.columns)
        cols[name] = v
        return PanelDataset._trusted(self.entity, self.time, cols)

    def take(self, rows) -> "PanelDataset":
        """Subset rows by boolean mask or sorted index array, keeping order."""
        rows = np.asarray(rows)
        return PanelDataset._trusted(
            self.entity[rows], self.time[rows], {k: v[rows] for k, v in self.columns.items()}
        )

    def to_frame(self, entity_name="entity", time_name="time") -> pd.DataFrame:
        df = pd.DataFrame({entity_name: self.entity, time_name: self.time})
        for k, v in self.columns.items():
            df[k] = v
        return df

    def to_csv(self, path, entity_name="entity", time_name="time") -> None:
        self.to_frame(entity_name, time_name).to_csv(path, index=False, float_format="%.17g")

    def equals(self, other: "PanelDataset") -> bool:
        if list(self.columns) != list(other.columns) or len(self) != len(other):
            return False
        if not (np.array_equal(self.entity, other.entity) and np.array_equal(self.time, other.time)):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k], equal_nan=True) for k in self.columns)


def load_csv(path, schema: ColumnSchema, extra_columns: Iterable[str] = ()) -> PanelDataset:
    """Read a panel from CSV.

    Every non-key column in the file is loaded as float; any cell that does
    not parse as a number becomes missing.  ``schema.data_columns`` and
    ``extra_columns`` must be present in the header.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    needed = [schema.entity, schema.time, *schema.data_columns, *extra_columns]
    missing = [c for c in needed if c not in raw.columns]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    time = pd.to_numeric(raw[schema.time], errors="coerce")
    if time.isna().any():
        bad = raw.loc[time.isna(), schema.time].iloc[0]
        raise IntegrityError(f"unparseable time value {bad!r} in column {schema.time!r}")
    cols = {
        c: pd.to_numeric(raw[c].str.strip(), errors="coerce").to_numpy(dtype=float)
        for c in raw.columns
        if c not in (schema.entity, schema.time)
    }
    return PanelDataset.from_arrays(raw[schema.entity].to_numpy(), time.to_numpy(), cols)


def impute(ds: PanelDataset, cols: Iterable[str]) -> PanelDataset:
    """Fill missing cells: linear interpolation inside each entity, then the column mean.

    Interpolation is against the time index and only covers gaps that have
    observed values on both sides.  Whatever remains (leading or trailing
    gaps, entities with no observations) takes the mean of all originally
    observed values of the column.
    """
    cols = list(cols)
    ds.require(cols)
    starts, stops = ds.groups()
    out = ds
    for c in cols:
        v = ds[c]
        observed = ~np.isnan(v)
        if not observed.any():
            raise ImputationError(f"column {c!r} has no observed values")
        if observed.all():
            continue
        filled = v.copy()
        overall = float(np.mean(v[observed]))
        t = ds.time.astype(float)
        for a, b in zip(starts, stops):
            seg, tt, ob = filled[a:b], t[a:b], observed[a:b]
            if ob.sum() >= 2:
                lo, hi = np.flatnonzero(ob)[[0, -1]]
                gap = np.flatnonzero(~ob[lo:hi]) + lo
                seg[gap] = np.interp(tt[gap], tt[ob], seg[ob])
        filled[np.isnan(filled)] = overall
        out = out.with_column(c, filled, overwrite=True)
    return out


def add_lag(ds: PanelDataset, col: str, k: int, new_name: str) -> PanelDataset:
    """Within-entity lag by ``k`` rows (``groupby(entity).shift(k)``)."""
    ds.require([col])
    if k < 1:
        raise ValueError("lag order must be >= 1")
    if new_name in ds:
        raise NamingError(f"column {new_name!r} already exists")
    return ds.with_column(new_name, lag_values(ds, col, k))


def lag_values(ds: PanelDataset, col: str, k: int) -> np.ndarray:
    """The lagged column of :func:`add_lag` as a bare array."""
    if k < 1:
        raise ValueError("lag order must be >= 1")
    v = ds[col]
    lagged = np.full(len(ds), np.nan)
    for a, b in zip(*ds.groups()):
        if b - a > k:
            lagged[a + k : b] = v[a : b - k]
    return lagged


def add_entity_mean(ds: PanelDataset, col: str, new_name: str) -> PanelDataset:
    """Entity mean of ``col`` broadcast to every row of the entity."""
    ds.require([col])
    if new_name in ds:
        raise NamingError(f"column {new_name!r} already exists")
    v = ds[col]
    if np.isnan(v).any():
        raise MissingValuesError(f"column {col!r} has missing values; impute first")
    codes = ds.entity_codes()
    sums = np.bincount(codes, weights=v)
    counts = np.bincount(codes)
    return ds.with_column(new_name, (sums / counts)[codes])


def drop_missing_rows(ds: PanelDataset, cols: Iterable[str]) -> PanelDataset:
    cols = list(cols)
    ds.require(cols)
    if not cols:
        return ds
    keep = ~np.isnan(ds.matrix(cols)).any(axis=1)
    return ds if keep.all() else ds.take(keep)


def filter_min_periods(ds: PanelDataset, col: str, min_periods: int) -> PanelDataset:
    """Keep entities with at least ``min_periods`` observed values of ``col``."""
    ds.require([col])
    observed = ~np.isnan(ds[col])
    codes = ds.entity_codes()
    counts = np.bincount(codes, weights=observed.astype(float), minlength=ds.n_entities)
    return ds.take(counts[codes] >= min_periods)
