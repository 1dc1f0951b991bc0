"""Benchmark protocol: unified time grids, repeated splits, ranking, bootstrap CIs.

A bench run evaluates every configured model on every (dataset, seed)
pair under a shared 70/30 split, scores the five survival metrics on
the held-out side, ranks models within each (dataset, metric) cell,
and summarizes each model by its median rank with a percentile
bootstrap confidence interval over datasets.  Grids, censoring curves,
and preprocessing statistics always come from the training side only;
test rows carry a taint flag that fitting code refuses to consume.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Preprocessor, SurvivalDataset, load_dataset, split
from .errors import ConfigError, DataError
from .metrics import (
    concordance_index,
    curves_from_matrix,
    d_calibration,
    integrated_brier,
    km_estimate,
    log_rank,
    mae_po,
    median_survival_time,
)
from .model import load_checkpoint, predict_survival
from .rng import RngStream

METRICS = ("IBS", "CI", "Dcal", "MAE", "LogRank")
# concordance rewards larger values; everything else is a discrepancy
LOWER_BETTER = {"IBS": True, "CI": False, "Dcal": True, "MAE": True, "LogRank": True}
OVERALL = "overall"
MODEL_KINDS = ("km", "pfn")
DEFAULT_SEEDS = tuple(range(10))
SHIFT_EPS = 1e-5


# ---------------------------------------------------------------------------
# time grids


def quantile_grid(times, events, k: int | None = None, shift_first: bool = False) -> np.ndarray:
    """Evenly spaced quantiles of the uncensored training times, deduplicated.

    ``k`` defaults to ceil(sqrt(#uncensored)).  With ``shift_first`` the
    first grid point is replaced by max(min training time - 1e-5, 0) for
    models that need the grid to start strictly before the data.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if times.ndim != 1 or times.shape != events.shape:
        raise DataError("times and events must be matching 1-d arrays")
    uncensored = times[events == 1]
    if uncensored.size == 0:
        raise DataError("quantile grid needs at least one uncensored time")
    if k is None:
        k = math.isqrt(uncensored.size)
        if k * k < uncensored.size:
            k += 1
    if k < 1:
        raise ConfigError(f"grid size must be >= 1, got {k}")
    probs = np.arange(k) / (k - 1) if k > 1 else np.array([0.0])
    grid = np.unique(np.quantile(uncensored, probs))
    if shift_first:
        grid[0] = max(float(times.min()) - SHIFT_EPS, 0.0)
    return grid


def continuous_grid(times) -> np.ndarray:
    """Zero followed by the sorted unique training times."""
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        raise DataError("continuous grid needs at least one time")
    if not np.all(np.isfinite(times)) or np.any(times < 0):
        raise DataError("times must be finite and nonnegative")
    return np.unique(np.concatenate(([0.0], times.ravel())))


# ---------------------------------------------------------------------------
# ranking


def rank_models(scores: dict, lower_better: bool = True):
    """Min-tied ranks from 1; failures (None/non-finite) all rank worst+1.

    Returns None (a void row) when every model failed.
    """
    completed = {
        m: float(s) for m, s in scores.items() if s is not None and math.isfinite(s)
    }
    if not completed:
        return None
    vals = np.array(list(completed.values()))
    ranked = {
        m: 1 + int(np.sum(vals < s) if lower_better else np.sum(vals > s))
        for m, s in completed.items()
    }
    worst = max(ranked.values())
    return {m: ranked.get(m, worst + 1) for m in scores}


def bootstrap_median_rank(ranks, b: int = 10000, rng: RngStream | None = None):
    """Observed median rank and its 95% percentile bootstrap CI over datasets.

    ``ranks`` holds one entry per dataset: either a scalar rank or a
    sequence of pooled ranks (overall ranking pools all metrics of a
    dataset).  Resampling draws whole datasets with replacement.
    """
    groups = [np.atleast_1d(np.asarray(r, dtype=np.float64)) for r in ranks]
    if not groups or any(g.size == 0 for g in groups):
        raise DataError("need at least one rank per dataset")
    if b < 1:
        raise ConfigError("bootstrap needs b >= 1")
    observed = float(np.median(np.concatenate(groups)))
    if rng is None:
        rng = RngStream(0).derive("bootstrap")
    gen = rng.generator() if hasattr(rng, "generator") else rng
    idx = gen.integers(0, len(groups), size=(b, len(groups)))
    if len({g.size for g in groups}) == 1:
        stacked = np.stack(groups)
        medians = np.median(stacked[idx].reshape(b, -1), axis=1)
    else:
        medians = np.array(
            [np.median(np.concatenate([groups[j] for j in row])) for row in idx]
        )
    lo, hi = np.quantile(medians, (0.025, 0.975))
    return observed, (float(lo), float(hi))


# ---------------------------------------------------------------------------
# bench models


class KmBaseline:
    """Marginal product-limit baseline: one shared curve for every subject."""

    def __init__(self, name: str = "km"):
        self.name = name
        self._km = None

    def fit(self, train: SurvivalDataset) -> "KmBaseline":
        if train.tainted:
            raise DataError("refusing to fit on tainted test-side rows")
        self._km = km_estimate(train.times, train.events)
        return self

    def predict_curves(self, x, grid) -> np.ndarray:
        if self._km is None:
            raise ConfigError("fit the baseline before predicting")
        row = np.atleast_1d(self._km(np.asarray(grid, dtype=np.float64)))
        return np.tile(row, (np.asarray(x).shape[0], 1))


class PfnCheckpointModel:
    """Checkpoint-backed in-context model; the training split is its context."""

    def __init__(self, model, transform_kind: str, name: str = "pfn", deterministic: bool = False):
        self.name = name
        self.model = model
        self.transform_kind = transform_kind
        self.deterministic = deterministic
        self._context = None

    @classmethod
    def from_checkpoint(cls, path, name: str = "pfn", deterministic: bool = False):
        model, transform_kind = load_checkpoint(path)
        return cls(model, transform_kind, name, deterministic)

    def fit(self, train: SurvivalDataset) -> "PfnCheckpointModel":
        if train.tainted:
            raise DataError("refusing to fit on tainted test-side rows")
        d_max = self.model.config.d_max
        if train.x.shape[1] > d_max:
            raise DataError(
                f"dataset has {train.x.shape[1]} features but the checkpoint supports d_max={d_max}"
            )
        self._context = (train.x, train.times, train.events)
        return self

    def predict_curves(self, x, grid) -> np.ndarray:
        if self._context is None:
            raise ConfigError("fit the model before predicting")
        return predict_survival(
            self.model, self._context, x, grid, self.transform_kind,
            deterministic=self.deterministic,
        )


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    types_path: str | None = None


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    checkpoint: str | None = None
    deterministic: bool = False

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.kind == "pfn" and not self.checkpoint:
            raise ConfigError(f"model {self.name!r} needs a checkpoint path")


@dataclass(frozen=True)
class BenchConfig:
    datasets: tuple
    models: tuple
    seeds: tuple = DEFAULT_SEEDS
    train_fraction: float = 0.7
    bootstrap_samples: int = 10000
    bootstrap_seed: int = 0

    def __post_init__(self) -> None:
        if not self.datasets or not self.models:
            raise ConfigError("bench needs at least one dataset and one model")
        for kind, specs in (("dataset", self.datasets), ("model", self.models)):
            names = [s.name for s in specs]
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate {kind} names: {names}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be nonempty and distinct")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.bootstrap_samples < 1:
            raise ConfigError("bootstrap_samples must be >= 1")


def _take(table: dict, key, default=None, required: bool = False):
    if required and key not in table:
        raise ConfigError(f"bench manifest is missing required key {key!r}")
    return table.pop(key, default)


def _no_leftovers(table: dict, where: str) -> None:
    if table:
        raise ConfigError(f"unknown keys in {where}: {sorted(table)}")


def bench_config_from_dict(raw: dict) -> BenchConfig:
    """Build a BenchConfig from a parsed TOML manifest table."""
    table = dict(raw)
    datasets = []
    for entry in _take(table, "datasets", required=True):
        entry = dict(entry)
        datasets.append(
            DatasetSpec(
                name=str(_take(entry, "name", required=True)),
                path=str(_take(entry, "path", required=True)),
                types_path=_take(entry, "types"),
            )
        )
        _no_leftovers(entry, f"dataset {datasets[-1].name!r}")
    models = []
    for entry in _take(table, "models", required=True):
        entry = dict(entry)
        models.append(
            ModelSpec(
                name=str(_take(entry, "name", required=True)),
                kind=str(_take(entry, "kind", required=True)),
                checkpoint=_take(entry, "checkpoint"),
                deterministic=bool(_take(entry, "deterministic", False)),
            )
        )
        _no_leftovers(entry, f"model {models[-1].name!r}")
    cfg = BenchConfig(
        datasets=tuple(datasets),
        models=tuple(models),
        seeds=tuple(int(s) for s in _take(table, "seeds", DEFAULT_SEEDS)),
        train_fraction=float(_take(table, "train_fraction", 0.7)),
        bootstrap_samples=int(_take(table, "bootstrap_samples", 10000)),
        bootstrap_seed=int(_take(table, "bootstrap_seed", 0)),
    )
    _no_leftovers(table, "bench manifest")
    return cfg


# ---------------------------------------------------------------------------
# split evaluation


@dataclass
class PreparedSplit:
    """Training-side artifacts plus the (tainted) test rows of one split."""

    train: SurvivalDataset
    test: SurvivalDataset
    grid: np.ndarray
    tau: float
    censor_km: object


def prepare_split(dataset: SurvivalDataset, seed: int, train_fraction: float = 0.7) -> PreparedSplit:
    """Split, fit preprocessing on the training side, derive grid/tau/censor-KM."""
    train_raw, test_raw = split(dataset, train_fraction, seed)
    pre = Preprocessor().fit(train_raw)
    train, test = pre.transform(train_raw), pre.transform(test_raw)
    grid = continuous_grid(train.times)
    tau = float(np.quantile(train.times, 0.9))
    if tau <= 0:
        raise DataError("degenerate split: 90th percentile of training times is 0")
    censor_km = km_estimate(train.times, 1 - train.events)
    return PreparedSplit(train, test, grid, tau, censor_km)


def score_predictions(prepared: PreparedSplit, matrix) -> dict:
    """All five metrics of one model's survival matrix on one split."""
    test = prepared.test
    curves = curves_from_matrix(prepared.grid, matrix)
    if len(curves) != test.n:
        raise DataError(f"expected {test.n} predicted curves, got {len(curves)}")
    ibs = integrated_brier(
        curves, test.times, test.events, prepared.censor_km, prepared.tau, prepared.grid
    )
    medians = np.array([median_survival_time(c) for c in curves])
    surv_at_event = np.array([curves[i](t) for i, t in enumerate(test.times)])
    ci = concordance_index(-medians, test.times, test.events)
    mae = mae_po(medians, test.times, test.events)
    return {
        "IBS": float(ibs),
        "CI": None if ci is None else float(ci),
        "Dcal": float(d_calibration(surv_at_event, test.events)),
        "MAE": None if mae is None else float(mae),
        "LogRank": float(log_rank(test.times, test.events, medians)),
        "ibs_floored": bool(ibs.floored),
    }


def evaluate_run(model, dataset: SurvivalDataset, seed: int, train_fraction: float = 0.7) -> dict:
    """Fit one model on one seeded split and score the held-out side."""
    prepared = prepare_split(dataset, seed, train_fraction)
    model.fit(prepared.train)
    return score_predictions(prepared, model.predict_curves(prepared.test.x, prepared.grid))


# ---------------------------------------------------------------------------
# the bench loop


def _instantiate(spec: ModelSpec, loaded: dict):
    if spec.kind == "km":
        return KmBaseline(spec.name)
    model, transform_kind = loaded[spec.name]
    return PfnCheckpointModel(model, transform_kind, spec.name, spec.deterministic)


def _run_job(cfg: BenchConfig, name: str, dataset: SurvivalDataset, seed: int, loaded: dict) -> dict:
    record: dict = {"dataset": name, "seed": seed, "error": None, "models": {}}
    try:
        prepared = prepare_split(dataset, seed, cfg.train_fraction)
    except Exception as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        return record
    for spec in cfg.models:
        try:
            model = _instantiate(spec, loaded)
            model.fit(prepared.train)
            matrix = model.predict_curves(prepared.test.x, prepared.grid)
            record["models"][spec.name] = {
                "metrics": score_predictions(prepared, matrix),
                "error": None,
            }
        except Exception as exc:
            record["models"][spec.name] = {
                "metrics": None,
                "error": f"{type(exc).__name__}: {exc}",
            }
    return record


def _mean_scores(cfg: BenchConfig, records: dict) -> dict:
    """Per (dataset, model, metric): mean/std over the seeds that produced a value.

    A model that raised on any seed of a dataset fails that whole dataset;
    a metric undefined on every seed fails that (dataset, metric) pair.
    """
    out: dict = {}
    for ds in cfg.datasets:
        seed_records = [records[(ds.name, s)] for s in cfg.seeds]
        for spec in cfg.models:
            crashed = any(
                r["error"] is not None or r["models"][spec.name]["error"] is not None
                for r in seed_records
            )
            for metric in METRICS:
                if crashed:
                    out[(ds.name, spec.name, metric)] = (None, None)
                    continue
                vals = [
                    r["models"][spec.name]["metrics"][metric]
                    for r in seed_records
                    if r["models"][spec.name]["metrics"][metric] is not None
                ]
                out[(ds.name, spec.name, metric)] = (
                    (float(np.mean(vals)), float(np.std(vals))) if vals else (None, None)
                )
    return out


def _aggregate(cfg: BenchConfig, records: dict) -> dict:
    scores = _mean_scores(cfg, records)
    rank_rows = []
    ranks_by_cell: dict = {}  # (model, metric) -> {dataset: rank}
    for ds in cfg.datasets:
        for metric in METRICS:
            cell = {spec.name: scores[(ds.name, spec.name, metric)][0] for spec in cfg.models}
            ranks = rank_models(cell, LOWER_BETTER[metric])
            for spec in cfg.models:
                mean, std = scores[(ds.name, spec.name, metric)]
                rank = None if ranks is None else ranks[spec.name]
                rank_rows.append(
                    {
                        "dataset": ds.name,
                        "metric": metric,
                        "model": spec.name,
                        "score": mean,
                        "score_std": std,
                        "rank": rank,
                        "failed": mean is None,
                    }
                )
                if rank is not None:
                    ranks_by_cell.setdefault((spec.name, metric), {})[ds.name] = rank
    summary = []
    base = RngStream(cfg.bootstrap_seed)
    for spec in cfg.models:
        for metric in (*METRICS, OVERALL):
            if metric == OVERALL:
                groups = [
                    [
                        ranks_by_cell[(spec.name, m)][ds.name]
                        for m in METRICS
                        if ds.name in ranks_by_cell.get((spec.name, m), {})
                    ]
                    for ds in cfg.datasets
                ]
                groups = [g for g in groups if g]
            else:
                per_ds = ranks_by_cell.get((spec.name, metric), {})
                groups = [[per_ds[ds.name]] for ds in cfg.datasets if ds.name in per_ds]
            entry = {"model": spec.name, "metric": metric, "n_datasets": len(groups)}
            if groups:
                median, (lo, hi) = bootstrap_median_rank(
                    groups, cfg.bootstrap_samples, base.derive("bootstrap", spec.name, metric)
                )
                entry.update(median_rank=median, ci_low=lo, ci_high=hi)
            else:
                entry.update(median_rank=None, ci_low=None, ci_high=None)
            summary.append(entry)
    return {"rank_table": rank_rows, "summary": summary}


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "_" for c in name)


def _write_reports(out_dir: str, report: dict) -> None:
    os.makedirs(os.path.join(out_dir, "runs"), exist_ok=True)
    for record in report["runs"]:
        path = os.path.join(
            out_dir, "runs", f"{_safe_name(record['dataset'])}_seed{record['seed']}.json"
        )
        with open(path, "w") as f:
            json.dump(record, f, sort_keys=True, separators=(",", ":"))
    with open(os.path.join(out_dir, "rank_table.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "metric", "model", "score", "score_std", "rank", "failed"])
        for row in report["rank_table"]:
            writer.writerow(
                [
                    row["dataset"],
                    row["metric"],
                    row["model"],
                    "" if row["score"] is None else repr(row["score"]),
                    "" if row["score_std"] is None else repr(row["score_std"]),
                    "" if row["rank"] is None else row["rank"],
                    int(row["failed"]),
                ]
            )
    with open(os.path.join(out_dir, "bench_report.json"), "w") as f:
        json.dump(report, f, sort_keys=True, separators=(",", ":"))


def run_bench(cfg: BenchConfig, out_dir: str | None = None, workers: int = 1) -> dict:
    """Evaluate every model on every (dataset, seed) job and rank the results.

    Jobs are independent and may run on a thread pool; aggregation is a
    sequential reduction in manifest order, so reports do not depend on
    worker scheduling.
    """
    datasets = {spec.name: load_dataset(spec.path, spec.types_path) for spec in cfg.datasets}
    loaded = {
        spec.name: load_checkpoint(spec.checkpoint)
        for spec in cfg.models
        if spec.kind == "pfn"
    }
    jobs = [(spec.name, datasets[spec.name], seed) for spec in cfg.datasets for seed in cfg.seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda j: _run_job(cfg, j[0], j[1], j[2], loaded), jobs)
            )
    else:
        results = [_run_job(cfg, name, ds, seed, loaded) for name, ds, seed in jobs]
    records = {(r["dataset"], r["seed"]): r for r in results}
    report = {
        "seeds": list(cfg.seeds),
        "train_fraction": cfg.train_fraction,
        "models": [spec.name for spec in cfg.models],
        "datasets": [spec.name for spec in cfg.datasets],
        "runs": [records[(spec.name, s)] for spec in cfg.datasets for s in cfg.seeds],
    }
    report.update(_aggregate(cfg, records))
    if out_dir is not None:
        _write_reports(out_dir, report)
    return report
