"""Prior-data training: target schedules, AdamW loop, checkpoint selection.

Each step draws a shared context size, samples a batch of independent
tasks from the prior, builds per-query latent targets under the
configured indicator schedule, fits the time transform on context rows
only, and applies one AdamW update to the mean loss over every
task-query pair.  Runs are reproducible from the seed alone: step k
consumes streams derived from ("step", k), so resuming from a
checkpoint replays the exact trajectory of an uninterrupted run.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .data import split
from .errors import ConfigError, NumericError
from .metrics import curves_from_matrix, integrated_brier, km_estimate
from .model import SurvivalPFN, backward, embed_tokens, load_checkpoint, predict_survival, save_checkpoint
from .rng import RngStream
from .timewarp import bin_index, fit_transform, make_binner

SCHEDULES = ("event_only", "both", "random")
LOSSES = ("nll", "sce")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    tasks_per_step: int = 4
    queries_per_task: int = 8
    ctx_range: tuple = (32, 256)
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    loss: str = "nll"
    sigma: float = 0.05  # model-space smoothing width for the sce loss
    schedule: str = "event_only"
    transform: str = "time2quantile"
    seed: int = 0
    checkpoint_every: int = 200
    keep_last: int = 10

    def __post_init__(self) -> None:
        if self.steps < 1 or self.tasks_per_step < 1 or self.queries_per_task < 1:
            raise ConfigError("steps, tasks_per_step, and queries_per_task must be >= 1")
        lo, hi = self.ctx_range
        if not 4 <= lo <= hi <= 2048:
            raise ConfigError(f"ctx_range must lie within [4, 2048], got {self.ctx_range}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.loss == "sce" and not self.sigma > 0:
            raise ConfigError("sce loss needs sigma > 0")
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ConfigError("need learning_rate > 0 and weight_decay >= 0")
        if self.checkpoint_every < 1 or self.keep_last < 1:
            raise ConfigError("checkpoint_every and keep_last must be >= 1")


@dataclass(frozen=True)
class QueryTarget:
    """One supervised pair: which latent the query should regress onto."""

    query_index: int
    indicator: int  # 1 -> event-time target, 0 -> censor-time target
    time: float


def make_query_targets(schedule: str, task, rng: RngStream) -> list:
    """Per-query latent targets; ``both`` duplicates each query as (0, 1)."""
    e = np.asarray(task.query_event_times, dtype=np.float64)
    c = np.asarray(task.query_censor_times, dtype=np.float64)
    if e.size < 1:
        raise ConfigError("task has no query rows")
    if schedule == "event_only":
        return [QueryTarget(i, 1, float(e[i])) for i in range(e.size)]
    if schedule == "both":
        out = []
        for i in range(e.size):
            out.append(QueryTarget(i, 0, float(c[i])))
            out.append(QueryTarget(i, 1, float(e[i])))
        return out
    if schedule == "random":
        p = float(np.mean(task.context.events))
        draws = rng.generator().uniform(size=e.size) < p
        return [
            QueryTarget(i, int(d), float(e[i] if d else c[i]))
            for i, d in enumerate(draws)
        ]
    raise ConfigError(f"unknown schedule {schedule!r}")


def _task_loss_and_grads(model: SurvivalPFN, task, targets, cfg: TrainConfig):
    """Mean loss and gradient over one task's query targets.

    The transform and binner are fitted on context times only; query
    latents never touch the fit.
    """
    transform = fit_transform(cfg.transform, task.context.times)
    binner = make_binner(transform, model.config.n_bins)
    lo, hi = transform.model_range
    z_ctx = np.clip(np.asarray(transform.forward(task.context.times)), lo, hi)
    idx = [t.query_index for t in targets]
    ind = np.array([t.indicator for t in targets], dtype=int)
    raw = np.array([t.time for t in targets], dtype=np.float64)
    batch = embed_tokens(model, (task.context.x, z_ctx, task.context.events), (task.x_query[idx], ind))
    if cfg.loss == "nll":
        bins = bin_index(binner, transform, raw)
        return (*backward(model, batch, bins, loss="nll"), len(targets))
    loss, gb = backward(model, batch, raw, loss="sce", sigma=cfg.sigma, transform=transform, binner=binner)
    return loss, gb, len(targets)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_update(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One decoupled-weight-decay Adam step; mutates state, returns params."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)


def train_step(model: SurvivalPFN, prior, state: AdamState, cfg: TrainConfig, rng: RngStream) -> float:
    """Sample a task batch, average losses, apply one update; returns loss."""
    lo, hi = cfg.ctx_range
    n_ctx = int(rng.derive("ctx-size").generator().integers(lo, hi + 1))
    total_loss = 0.0
    total_n = 0
    grad_sum = np.zeros(model.n_params)
    for j in range(cfg.tasks_per_step):
        trng = rng.derive("task", j)
        task = prior.sample_task(trng, n_ctx, cfg.queries_per_task)
        targets = make_query_targets(cfg.schedule, task, trng.derive("indicators"))
        loss_j, gb, n_j = _task_loss_and_grads(model, task, targets, cfg)
        if not math.isfinite(loss_j):
            raise NumericError(f"non-finite loss in task {j} of this step (stream {trng})")
        total_loss += n_j * loss_j
        grad_sum += n_j * gb.grads
        total_n += n_j
    mean_loss = total_loss / total_n
    mean_grads = grad_sum / total_n
    model.set_flat(adamw_update(state, model.get_flat(), mean_grads, cfg.learning_rate, cfg.weight_decay))
    return mean_loss


# ---------------------------------------------------------------------------
# checkpoint scoring


def combine_weighted_scores(sizes, values) -> float:
    """Sum sqrt(N) * value / sum sqrt(N): larger datasets weigh more."""
    sizes = np.asarray(sizes, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if sizes.shape != values.shape or sizes.size == 0 or np.any(sizes <= 0):
        raise ConfigError("need matching nonempty sizes > 0 and values")
    w = np.sqrt(sizes)
    return float(np.sum(w * values) / np.sum(w))


def weighted_ibs(
    model: SurvivalPFN,
    datasets,
    transform_kind: str = "time2quantile",
    split_seed: int = 0,
    deterministic: bool = False,
) -> float:
    """Square-root-size weighted IBS over fixed 70/30 splits."""
    from .bench import quantile_grid  # local import: bench builds on this module's outputs

    sizes, values = [], []
    for ds in datasets:
        train_side, test_side = split(ds, 0.7, split_seed)
        grid = quantile_grid(train_side.times, train_side.events)
        tau = float(np.quantile(train_side.times, 0.9))
        surv = predict_survival(
            model, train_side, test_side.x, grid, transform_kind, deterministic=deterministic
        )
        cens_km = km_estimate(train_side.times, 1 - train_side.events)
        res = integrated_brier(
            curves_from_matrix(grid, surv), test_side.times, test_side.events, cens_km, tau, grid
        )
        sizes.append(ds.n)
        values.append(res.value)
    return combine_weighted_scores(sizes, values)


def select_checkpoint(checkpoint_paths, datasets, split_seed: int = 0):
    """Argmin of the weighted IBS; failures score +inf; first index wins ties."""
    if not checkpoint_paths:
        raise ConfigError("no checkpoints to select from")
    if not datasets:
        raise ConfigError("no validation datasets")
    scores = []
    for path in checkpoint_paths:
        try:
            model, transform_kind = load_checkpoint(path)
            scores.append(weighted_ibs(model, datasets, transform_kind, split_seed))
        except Exception:
            scores.append(float("inf"))
    best = int(np.argmin(scores))  # argmin keeps the first minimum
    return checkpoint_paths[best], scores


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    history: list
    checkpoints: list
    best_checkpoint: str | None = None
    best_score: float | None = None


def _opt_path(ckpt_path: str) -> str:
    return str(ckpt_path) + ".opt.npz"


def train(
    model: SurvivalPFN,
    prior,
    cfg: TrainConfig,
    out_dir=None,
    validation=None,
    resume_from=None,
    log=None,
    clock=None,
) -> TrainResult:
    """Run the loop; optionally checkpoint, validate, and write a JSONL log.

    ``resume_from`` restores parameters and optimizer state from an
    earlier checkpoint of the same run and continues at the recorded
    step; derived per-step streams make the continuation bit-identical
    to never having stopped.  ``clock`` replaces the wall-time source
    for the log (pass a constant to make log files byte-reproducible).
    """
    state = AdamState.zeros(model.n_params)
    start_step = 0
    if resume_from is not None:
        restored, _ = load_checkpoint(resume_from)
        if restored.config != model.config:
            raise ConfigError("resume checkpoint was written by a different model config")
        model.set_flat(restored.get_flat())
        opt = np.load(_opt_path(resume_from))
        state = AdamState(opt["m"].copy(), opt["v"].copy(), int(opt["t"]))
        start_step = int(opt["next_step"])
    base = RngStream(cfg.seed)
    history: list = []
    checkpoints: list = []
    best_score, best_path = None, None
    log_f = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_f = open(os.path.join(out_dir, "train_log.jsonl"), "a" if resume_from else "w")
    tick = clock if clock is not None else time.monotonic
    t0 = tick()

    def checkpoint(step: int) -> None:
        nonlocal best_score, best_path
        path = os.path.join(out_dir, f"ckpt_{step:06d}.spfn")
        save_checkpoint(model, path, cfg.transform)
        np.savez(_opt_path(path), m=state.m, v=state.v, t=state.t, next_step=step + 1)
        checkpoints.append(path)
        if validation:
            try:
                score = weighted_ibs(model, validation, cfg.transform)
            except Exception:
                score = float("inf")
            if best_score is None or score < best_score:
                best_score, best_path = score, path
        # newest keep_last survive, plus the best-scoring one regardless of age
        keep = set(checkpoints[-cfg.keep_last :])
        if best_path is not None:
            keep.add(best_path)
        for old in [c for c in checkpoints if c not in keep]:
            checkpoints.remove(old)
            for stale in (old, _opt_path(old)):
                if os.path.exists(stale):
                    os.remove(stale)

    try:
        for step in range(start_step, cfg.steps):
            loss = train_step(model, prior, state, cfg, base.derive("step", step))
            entry = {
                "step": step,
                "loss": loss,
                "wall_time": tick() - t0,
                "seed": cfg.seed,
            }
            history.append(entry)
            if log is not None:
                log(entry)
            if log_f is not None:
                log_f.write(json.dumps(entry) + "\n")
                log_f.flush()
            if out_dir is not None and ((step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.steps):
                checkpoint(step)
    finally:
        if log_f is not None:
            log_f.close()
    return TrainResult(history, checkpoints, best_path, best_score)
