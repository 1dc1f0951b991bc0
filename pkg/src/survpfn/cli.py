"""Command-line entry point wiring the pipeline together.

Subcommands: gen-prior, train, predict, eval, bench, diag.  Every run
takes its settings from a TOML config (plus SURVPFN_SECTION__KEY
environment overrides), writes its reports under --out, and finishes
by echoing a manifest.json with the resolved configuration, master
seed, and sha256 checksums of all input and output artifacts.  Exit
codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .bench import (
    METRICS,
    KmBaseline,
    PfnCheckpointModel,
    bench_config_from_dict,
    evaluate_run,
    prepare_split,
    run_bench,
)
from .config import (
    apply_env_overrides,
    load_toml,
    prior_config_from_dict,
    reject_leftovers,
    take,
)
from .corpus import read_binary, read_jsonl, write_binary, write_jsonl
from .data import load_dataset
from .diagnostics import curve_bands, task_diagnostics
from .errors import ConfigError, DataError, NumericError
from .model import ModelConfig, SurvivalPFN, load_checkpoint, predict_survival
from .prior import SimpleExponentialPrior, SyntheticPrior
from .rng import RngStream
from .train import TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# manifest echo


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, separators=(",", ":"))


def write_run_manifest(out_dir, subcommand: str, config: dict, seed: int, inputs) -> None:
    """Echo the resolved run into out_dir/manifest.json with checksums."""
    outputs = {}
    for root, dirs, files in os.walk(out_dir):
        dirs.sort()
        for fn in sorted(files):
            rel = os.path.relpath(os.path.join(root, fn), out_dir)
            if rel != "manifest.json":
                outputs[rel] = _sha256(os.path.join(root, fn))
    _dump_json(
        {
            "subcommand": subcommand,
            "config": config,
            "seed": seed,
            "inputs": {str(p): _sha256(p) for p in inputs},
            "outputs": outputs,
        },
        os.path.join(out_dir, "manifest.json"),
    )


def _resolve_seed(args, section: dict, key: str = "seed", default: int = 0) -> int:
    if args.seed is not None:
        section.pop(key, None)
        return int(args.seed)
    return int(take(section, key, default))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_prior(cfg: dict, args) -> tuple:
    section = dict(cfg.get("prior", {}))
    n_tasks = int(section.get("n_tasks", 10))
    n_ctx = int(section.get("n_ctx", 256))
    n_query = int(section.get("n_query", 8))
    fmt = section.get("format", "jsonl")
    seed = int(args.seed) if args.seed is not None else int(section.get("seed", 0))
    if n_tasks < 1:
        raise ConfigError("n_tasks must be >= 1")
    if fmt not in ("jsonl", "binary"):
        raise ConfigError(f"corpus format must be 'jsonl' or 'binary', got {fmt!r}")
    pcfg = prior_config_from_dict(section)
    prior = SyntheticPrior(pcfg)
    base = RngStream(seed)
    tasks = [prior.sample_task(base.derive("task", i), n_ctx, n_query) for i in range(n_tasks)]
    os.makedirs(args.out, exist_ok=True)
    if fmt == "jsonl":
        corpus_path = os.path.join(args.out, "corpus.jsonl")
        write_jsonl(corpus_path, tasks)
    else:
        corpus_path = os.path.join(args.out, "corpus.spfntask")
        write_binary(corpus_path, tasks)
    families: dict = {}
    mechanisms: dict = {}
    for task in tasks:
        families[task.spec.family] = families.get(task.spec.family, 0) + 1
        mechanisms[task.spec.censoring] = mechanisms.get(task.spec.censoring, 0) + 1
    summary = {
        "corpus": os.path.basename(corpus_path),
        "n_tasks": n_tasks,
        "families": families,
        "censoring_mechanisms": mechanisms,
        "mean_censoring_rate": float(
            np.mean([np.mean(t.context.events == 0) for t in tasks])
        ),
    }
    _dump_json(summary, os.path.join(args.out, "generation_summary.json"))
    resolved = {
        "prior": {
            "n_tasks": n_tasks,
            "n_ctx": n_ctx,
            "n_query": n_query,
            "format": fmt,
            **{k: list(v) if isinstance(v, tuple) else v
               for k, v in asdict(pcfg).items()},
        }
    }
    return resolved, seed, []


def _model_config_from_dict(raw: dict) -> ModelConfig:
    table = dict(raw)
    kwargs = {}
    for key, cast in (
        ("d_max", int), ("hidden", int), ("n_layers", int), ("n_heads", int),
        ("n_bins", int), ("ff_width", int), ("qk_norm", bool), ("swiglu", bool),
        ("seed", int),
    ):
        if key in table:
            kwargs[key] = cast(table.pop(key))
    reject_leftovers(table, "[model]")
    return ModelConfig(**kwargs)


def cmd_train(cfg: dict, args) -> tuple:
    model_cfg = _model_config_from_dict(cfg.get("model", {}))
    section = dict(cfg.get("train", {}))
    prior_kind = take(section, "prior", "synthetic")
    validation_paths = list(take(section, "validation", []))
    resume = take(section, "resume")
    seed = _resolve_seed(args, section)
    kwargs: dict = {"seed": seed}
    if "ctx_range" in section:
        kwargs["ctx_range"] = tuple(int(v) for v in section.pop("ctx_range"))
    for key, cast in (
        ("steps", int), ("tasks_per_step", int), ("queries_per_task", int),
        ("learning_rate", float), ("weight_decay", float), ("loss", str),
        ("sigma", float), ("schedule", str), ("transform", str),
        ("checkpoint_every", int), ("keep_last", int),
    ):
        if key in section:
            kwargs[key] = cast(section.pop(key))
    reject_leftovers(section, "[train]")
    train_cfg = TrainConfig(**kwargs)
    if prior_kind == "synthetic":
        prior = SyntheticPrior(prior_config_from_dict(cfg.get("prior", {})))
    elif prior_kind == "simple":
        prior = SimpleExponentialPrior()
    else:
        raise ConfigError(f"prior must be 'synthetic' or 'simple', got {prior_kind!r}")
    validation = [load_dataset(p) for p in validation_paths]
    model = SurvivalPFN(model_cfg)
    result = train(
        model,
        prior,
        train_cfg,
        out_dir=args.out,
        validation=validation or None,
        resume_from=resume,
        clock=(lambda: 0.0) if args.deterministic else None,
    )
    summary = {
        "final_loss": result.history[-1]["loss"] if result.history else None,
        "checkpoints": [os.path.basename(p) for p in result.checkpoints],
        "best_checkpoint": (
            os.path.basename(result.best_checkpoint) if result.best_checkpoint else None
        ),
        "best_score": result.best_score,
    }
    _dump_json(summary, os.path.join(args.out, "train_summary.json"))
    resolved = {
        "model": asdict(model_cfg),
        "train": {
            **{k: list(v) if isinstance(v, tuple) else v
               for k, v in asdict(train_cfg).items()},
            "prior": prior_kind,
            "validation": validation_paths,
            "resume": resume,
        },
    }
    if prior_kind == "synthetic":
        resolved["prior"] = {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in asdict(prior.cfg).items()
        }
    inputs = list(validation_paths) + ([resume] if resume else [])
    return resolved, seed, inputs


def cmd_predict(cfg: dict, args) -> tuple:
    section = dict(cfg.get("predict", {}))
    checkpoint = take(section, "checkpoint", required=True)
    dataset_path = take(section, "dataset", required=True)
    types_path = take(section, "types")
    seed = _resolve_seed(args, section, "split_seed")
    fraction = float(take(section, "train_fraction", 0.7))
    reject_leftovers(section, "[predict]")
    model, transform_kind = load_checkpoint(checkpoint)
    dataset = load_dataset(dataset_path, types_path)
    prepared = prepare_split(dataset, seed, fraction)
    width = prepared.train.x.shape[1]
    if width > model.config.d_max:
        raise DataError(
            f"dataset has {width} features after preprocessing but the checkpoint "
            f"supports d_max={model.config.d_max}"
        )
    matrix = predict_survival(
        model,
        prepared.train,
        prepared.test.x,
        prepared.grid,
        transform_kind,
        deterministic=args.deterministic,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "predictions.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([repr(float(t)) for t in prepared.grid])
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
    resolved = {
        "predict": {
            "checkpoint": checkpoint,
            "dataset": dataset_path,
            "types": types_path,
            "split_seed": seed,
            "train_fraction": fraction,
            "n_test": int(prepared.test.n),
            "grid_size": int(prepared.grid.size),
        }
    }
    inputs = [checkpoint, dataset_path] + ([types_path] if types_path else [])
    return resolved, seed, inputs


def cmd_eval(cfg: dict, args) -> tuple:
    section = dict(cfg.get("eval", {}))
    kind = take(section, "model", required=True)
    checkpoint = take(section, "checkpoint")
    dataset_path = take(section, "dataset", required=True)
    types_path = take(section, "types")
    seeds = [int(s) for s in take(section, "seeds", [0])]
    if args.seed is not None:
        seeds = [int(args.seed)]
    fraction = float(take(section, "train_fraction", 0.7))
    reject_leftovers(section, "[eval]")
    if not seeds:
        raise ConfigError("eval needs at least one seed")
    dataset = load_dataset(dataset_path, types_path)
    if kind == "km":
        make = KmBaseline
    elif kind == "pfn":
        if not checkpoint:
            raise ConfigError("eval model 'pfn' needs a checkpoint path")
        model, transform_kind = load_checkpoint(checkpoint)
        make = lambda: PfnCheckpointModel(  # noqa: E731 - tiny local factory
            model, transform_kind, deterministic=args.deterministic
        )
    else:
        raise ConfigError(f"eval model must be 'km' or 'pfn', got {kind!r}")
    per_seed = [
        {"seed": s, "metrics": evaluate_run(make(), dataset, s, fraction)} for s in seeds
    ]
    means = {}
    for metric in METRICS:
        vals = [r["metrics"][metric] for r in per_seed if r["metrics"][metric] is not None]
        means[metric] = float(np.mean(vals)) if vals else None
    report = {
        "dataset": dataset_path,
        "model": kind,
        "per_seed": per_seed,
        "mean": means,
    }
    os.makedirs(args.out, exist_ok=True)
    _dump_json(report, os.path.join(args.out, "eval_report.json"))
    resolved = {
        "eval": {
            "model": kind,
            "checkpoint": checkpoint,
            "dataset": dataset_path,
            "types": types_path,
            "seeds": seeds,
            "train_fraction": fraction,
        }
    }
    inputs = [dataset_path] + ([checkpoint] if checkpoint else []) + (
        [types_path] if types_path else []
    )
    return resolved, seeds[0], inputs


def cmd_bench(cfg: dict, args) -> tuple:
    bench_cfg = bench_config_from_dict(cfg.get("bench", {}))
    if args.seed is not None:
        bench_cfg = dataclasses.replace(bench_cfg, bootstrap_seed=int(args.seed))
    if args.deterministic:
        bench_cfg = dataclasses.replace(
            bench_cfg,
            models=tuple(
                dataclasses.replace(m, deterministic=True) if m.kind == "pfn" else m
                for m in bench_cfg.models
            ),
        )
    os.makedirs(args.out, exist_ok=True)
    run_bench(bench_cfg, args.out, workers=max(1, int(args.workers)))
    resolved = {
        "bench": {
            "seeds": list(bench_cfg.seeds),
            "train_fraction": bench_cfg.train_fraction,
            "bootstrap_samples": bench_cfg.bootstrap_samples,
            "bootstrap_seed": bench_cfg.bootstrap_seed,
            "datasets": [asdict(d) for d in bench_cfg.datasets],
            "models": [asdict(m) for m in bench_cfg.models],
        }
    }
    inputs = [d.path for d in bench_cfg.datasets]
    inputs += [d.types_path for d in bench_cfg.datasets if d.types_path]
    inputs += [m.checkpoint for m in bench_cfg.models if m.checkpoint]
    return resolved, bench_cfg.bootstrap_seed, inputs


def cmd_diag(cfg: dict, args) -> tuple:
    section = dict(cfg.get("diag", {}))
    corpus = take(section, "corpus", required=True)
    fmt = take(section, "format")
    seed = _resolve_seed(args, section)
    reject_leftovers(section, "[diag]")
    if fmt is None:
        fmt = "jsonl" if str(corpus).endswith(".jsonl") else "binary"
    if fmt == "jsonl":
        tasks = read_jsonl(corpus)
    elif fmt == "binary":
        tasks = read_binary(corpus)
    else:
        raise ConfigError(f"corpus format must be 'jsonl' or 'binary', got {fmt!r}")
    if not tasks:
        raise DataError(f"corpus {corpus} holds no tasks")
    per_task = [task_diagnostics(t, seed) for t in tasks]
    cmis = np.array([d["cmi"] for d in per_task if d["cmi"] is not None])
    rates = np.array([d["censoring_rate"] for d in per_task])
    decile_counts = np.bincount(
        np.minimum((rates * 10).astype(int), 9), minlength=10
    )
    report = {
        "corpus": str(corpus),
        "n_tasks": len(tasks),
        "per_task": per_task,
        "cmi_median": float(np.median(cmis)) if cmis.size else None,
        "cmi_p95": float(np.percentile(cmis, 95)) if cmis.size else None,
        "censoring_rate_decile_counts": decile_counts.tolist(),
    }
    if len(tasks) >= 10:
        bands = curve_bands(tasks)
        report["bands"] = {
            "grid": bands.grid.tolist(),
            "percentiles": list(bands.percentiles),
            "event": bands.event.tolist(),
            "censor": bands.censor.tolist(),
            "km": bands.km.tolist(),
        }
    os.makedirs(args.out, exist_ok=True)
    _dump_json(report, os.path.join(args.out, "diag_report.json"))
    resolved = {"diag": {"corpus": str(corpus), "format": fmt}}
    return resolved, seed, [corpus]


# ---------------------------------------------------------------------------
# argument parsing and dispatch

_HANDLERS = {
    "gen-prior": cmd_gen_prior,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "diag": cmd_diag,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML configuration file")
    common.add_argument("--out", required=True, help="output directory for reports")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--workers", type=int, default=1, help="bench worker count")
    common.add_argument(
        "--deterministic", action="store_true",
        help="bit-reproducible mode (order-independent reductions, fixed log clock)",
    )
    parser = argparse.ArgumentParser(
        prog="survpfn",
        description="Amortized Bayesian survival inference: priors, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("gen-prior", "sample a synthetic task corpus"),
        ("train", "train a model on a task prior"),
        ("predict", "write a survival matrix CSV for a dataset split"),
        ("eval", "score one model on seeded splits of one dataset"),
        ("bench", "run the multi-model ranking protocol"),
        ("diag", "identifiability and diversity diagnostics for a corpus"),
    ):
        sub.add_parser(name, parents=[common], help=helptext)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_toml(args.config) if args.config else {}
        cfg = apply_env_overrides(cfg)
        resolved, seed, inputs = _HANDLERS[args.command](cfg, args)
        if args.config:
            inputs = [args.config, *inputs]
        write_run_manifest(args.out, args.command, resolved, seed, inputs)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
