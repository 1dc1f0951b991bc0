"""Survival datasets: the shared container, CSV ingestion, splits, and
split-time preprocessing with a leakage guard.

CSV schema: reserved columns ``time`` and ``event``; every other column
is a feature.  Categorical columns are declared in an optional sidecar
JSON (``<csv>.types.json`` with ``{"categorical": [...]}``) and any
column that does not parse as numeric is treated as categorical too.
Categoricals are one-hot encoded (levels in lexicographic order),
missing numerics median-filled, missing categoricals mode-filled, and a
0/1 missing-indicator column is appended per source column that had any
missing values.  The pre-fill missing mask is retained so split-time
preprocessing can re-impute from training-side statistics only.

Test-side datasets are tainted by :func:`split`; fitting preprocessing
(or anything else) on a tainted dataset raises.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .rng import RngStream

RESERVED_COLUMNS = ("time", "event")


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    kind: str  # numeric | onehot | indicator
    source: str


@dataclass(eq=False)
class SurvivalDataset:
    """Numeric feature matrix with right-censored outcomes."""

    x: np.ndarray
    times: np.ndarray
    events: np.ndarray
    columns: list[ColumnInfo] = field(default_factory=list)
    source_columns: list[str] = field(default_factory=list)
    missing: np.ndarray | None = None  # (n, len(source_columns)) pre-fill mask
    tainted: bool = False  # True for test-side rows; fitting on them raises

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.times = np.asarray(self.times, dtype=np.float64)
        self.events = np.asarray(self.events)
        n = self.x.shape[0]
        if self.times.shape != (n,) or self.events.shape != (n,):
            raise DataError("x, times, and events must agree on the row count")
        if not np.all(np.isfinite(self.times)) or np.any(self.times < 0):
            bad = np.flatnonzero(~np.isfinite(self.times) | (self.times < 0))
            raise DataError(f"times must be finite and >= 0; bad rows {bad.tolist()}")
        if not np.all(np.isin(self.events, (0, 1))):
            bad = np.flatnonzero(~np.isin(self.events, (0, 1)))
            raise DataError(f"events must be 0/1; bad rows {bad.tolist()}")
        self.events = self.events.astype(np.int64)
        if not self.columns:
            self.columns = [
                ColumnInfo(f"x{j}", "numeric", f"x{j}") for j in range(self.x.shape[1])
            ]
        if len(self.columns) != self.x.shape[1]:
            raise DataError("column metadata does not match the feature width")
        if not self.source_columns:
            seen: list[str] = []
            for c in self.columns:
                if c.source not in seen:
                    seen.append(c.source)
            self.source_columns = seen
        if self.missing is not None:
            self.missing = np.asarray(self.missing, dtype=bool)
            if self.missing.shape != (n, len(self.source_columns)):
                raise DataError("missing mask shape mismatch")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def censoring_rate(self) -> float:
        return float(np.mean(self.events == 0))

    def subset(self, idx: np.ndarray, tainted: bool) -> "SurvivalDataset":
        return SurvivalDataset(
            self.x[idx],
            self.times[idx],
            self.events[idx],
            columns=list(self.columns),
            source_columns=list(self.source_columns),
            missing=None if self.missing is None else self.missing[idx],
            tainted=tainted,
        )


def _parse_numeric(series) -> tuple[np.ndarray, bool]:
    """(values-with-NaN, fully_numeric) for a pandas Series."""
    import pandas as pd

    coerced = pd.to_numeric(series, errors="coerce")
    fully = bool((coerced.notna() | series.isna()).all())
    return coerced.to_numpy(dtype=np.float64), fully


def load_dataset(path, types_path=None) -> SurvivalDataset:
    """Load a survival CSV into a numeric, NaN-free dataset."""
    import pandas as pd

    df = pd.read_csv(path)
    for col in RESERVED_COLUMNS:
        if col not in df.columns:
            raise DataError(f"{path}: missing reserved column {col!r}")
    times, t_ok = _parse_numeric(df["time"])
    if not t_ok or np.any(np.isnan(times)):
        bad = np.flatnonzero(np.isnan(times))
        raise DataError(f"{path}: non-numeric or missing time values at rows {bad.tolist()}")
    if np.any(times < 0):
        bad = np.flatnonzero(times < 0)
        raise DataError(f"{path}: negative times at rows {bad.tolist()}")
    events_raw, e_ok = _parse_numeric(df["event"])
    bad = np.flatnonzero(np.isnan(events_raw) | ~np.isin(events_raw, (0.0, 1.0)))
    if not e_ok or bad.size:
        raise DataError(f"{path}: event values must be 0/1; bad rows {bad.tolist()}")

    if types_path is None:
        candidate = str(path) + ".types.json"
        types_path = candidate
    declared: set[str] = set()
    try:
        with open(types_path) as f:
            declared = set(json.load(f).get("categorical", []))
    except FileNotFoundError:
        pass

    feature_names = [c for c in df.columns if c not in RESERVED_COLUMNS]
    blocks: list[np.ndarray] = []
    columns: list[ColumnInfo] = []
    missing_cols: list[np.ndarray] = []
    n = len(df)
    for name in feature_names:
        series = df[name]
        values, fully_numeric = _parse_numeric(series)
        is_missing = series.isna().to_numpy()
        if name in declared or not fully_numeric:
            levels = sorted({str(v) for v, m in zip(series, is_missing) if not m})
            if not levels:
                raise DataError(f"{path}: column {name!r} has no observed values")
            as_str = np.array([str(v) for v in series], dtype=object)
            counts = {lv: int(np.sum(as_str[~is_missing] == lv)) for lv in levels}
            # mode with a stable tie-break: highest count, then smallest level
            best = max(counts.values())
            mode = min(lv for lv in levels if counts[lv] == best)
            as_str[is_missing] = mode
            for lv in levels:
                blocks.append((as_str == lv).astype(np.float64))
                columns.append(ColumnInfo(f"{name}={lv}", "onehot", name))
        else:
            if np.all(is_missing):
                raise DataError(f"{path}: column {name!r} is entirely missing")
            median = float(np.median(values[~is_missing]))
            filled = np.where(is_missing, median, values)
            blocks.append(filled)
            columns.append(ColumnInfo(name, "numeric", name))
        missing_cols.append(is_missing)
    for name, is_missing in zip(feature_names, missing_cols):
        if np.any(is_missing):
            blocks.append(is_missing.astype(np.float64))
            columns.append(ColumnInfo(f"{name}__missing", "indicator", name))
    if not blocks:
        raise DataError(f"{path}: no feature columns")
    x = np.column_stack(blocks)
    missing = np.column_stack(missing_cols) if missing_cols else None
    return SurvivalDataset(
        x,
        times,
        events_raw.astype(np.int64),
        columns=columns,
        source_columns=list(feature_names),
        missing=missing,
    )


def dataset_to_json(ds: SurvivalDataset) -> str:
    """Canonical JSON serialization; floats round-trip exactly."""
    record = {
        "columns": [{"name": c.name, "kind": c.kind, "source": c.source} for c in ds.columns],
        "source_columns": ds.source_columns,
        "x": ds.x.tolist(),
        "times": ds.times.tolist(),
        "events": ds.events.tolist(),
        "missing": None if ds.missing is None else ds.missing.astype(int).tolist(),
        "tainted": ds.tainted,
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def dataset_from_json(text: str) -> SurvivalDataset:
    record = json.loads(text)
    return SurvivalDataset(
        np.asarray(record["x"], dtype=np.float64),
        np.asarray(record["times"], dtype=np.float64),
        np.asarray(record["events"]),
        columns=[ColumnInfo(c["name"], c["kind"], c["source"]) for c in record["columns"]],
        source_columns=list(record["source_columns"]),
        missing=None if record["missing"] is None else np.asarray(record["missing"], bool),
        tainted=bool(record["tainted"]),
    )


def split(ds: SurvivalDataset, train_fraction: float, seed: int) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Seeded uniform shuffle, then prefix split with floor(n*fraction) rows.

    The test side comes back tainted so nothing downstream can fit on it.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must be in (0,1), got {train_fraction}")
    n_train = math.floor(ds.n * train_fraction)
    if n_train < 1 or n_train >= ds.n:
        raise DataError(
            f"split of {ds.n} rows at fraction {train_fraction} leaves an empty side"
        )
    perm = RngStream(seed).derive("split").generator().permutation(ds.n)
    return ds.subset(perm[:n_train], tainted=ds.tainted), ds.subset(perm[n_train:], tainted=True)


class Preprocessor:
    """Split-time imputation and standardization fitted on training rows only.

    Numeric features: missing entries re-filled with the training median,
    then standardized by training mean/std.  One-hot groups: missing rows
    re-set to the training mode level.  Indicator columns pass through.
    """

    def __init__(self) -> None:
        self._fitted = False

    def fit(self, train: SurvivalDataset) -> "Preprocessor":
        if train.tainted:
            raise DataError("refusing to fit preprocessing on tainted (test-side) rows")
        self._numeric: dict[int, tuple[float, float, float]] = {}  # col -> (median, mean, std)
        self._onehot: dict[str, int] = {}  # source -> mode column index
        src_index = {s: j for j, s in enumerate(train.source_columns)}
        groups: dict[str, list[int]] = {}
        for j, col in enumerate(train.columns):
            if col.kind == "onehot":
                groups.setdefault(col.source, []).append(j)
        for j, col in enumerate(train.columns):
            if col.kind != "numeric":
                continue
            vals = train.x[:, j]
            if train.missing is not None and col.source in src_index:
                observed = vals[~train.missing[:, src_index[col.source]]]
            else:
                observed = vals
            if observed.size == 0:
                observed = vals
            median = float(np.median(observed))
            filled = vals.copy()
            if train.missing is not None and col.source in src_index:
                filled[train.missing[:, src_index[col.source]]] = median
            mean = float(np.mean(filled))
            std = float(np.std(filled))
            self._numeric[j] = (median, mean, std if std > 1e-12 else 1.0)
        for source, cols in groups.items():
            if train.missing is not None and source in src_index:
                rows = ~train.missing[:, src_index[source]]
            else:
                rows = np.ones(train.n, bool)
            counts = train.x[rows][:, cols].sum(axis=0)
            self._onehot[source] = cols[int(np.argmax(counts))]
        self._groups = groups
        self._fitted = True
        return self

    def transform(self, ds: SurvivalDataset) -> SurvivalDataset:
        if not self._fitted:
            raise DataError("preprocessor not fitted")
        x = ds.x.copy()
        src_index = {s: j for j, s in enumerate(ds.source_columns)}
        for j, (median, mean, std) in self._numeric.items():
            source = ds.columns[j].source
            if ds.missing is not None and source in src_index:
                x[ds.missing[:, src_index[source]], j] = median
            x[:, j] = (x[:, j] - mean) / std
        for source, cols in self._groups.items():
            if ds.missing is None or source not in src_index:
                continue
            rows = ds.missing[:, src_index[source]]
            if np.any(rows):
                for c in cols:
                    x[rows, c] = 0.0
                x[rows, self._onehot[source]] = 1.0
        out = SurvivalDataset(
            x,
            ds.times.copy(),
            ds.events.copy(),
            columns=list(ds.columns),
            source_columns=list(ds.source_columns),
            missing=None if ds.missing is None else ds.missing.copy(),
            tainted=ds.tainted,
        )
        return out
