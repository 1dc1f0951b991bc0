"""Training loop: target schedules, AdamW algebra, leakage guard,
resume bit-identity, and weighted checkpoint selection."""

import importlib
import json
import math
import os
from types import SimpleNamespace

import numpy as np
import pytest

from survpfn.data import SurvivalDataset
from survpfn.errors import ConfigError, NumericError
from survpfn.model import ModelConfig, SurvivalPFN, save_checkpoint
from survpfn.prior import SimpleExponentialPrior
from survpfn.rng import RngStream
from survpfn.train import (
    AdamState,
    TrainConfig,
    adamw_update,
    combine_weighted_scores,
    make_query_targets,
    select_checkpoint,
    train,
    train_step,
    weighted_ibs,
)

train_mod = importlib.import_module("survpfn.train")

TINY = ModelConfig(d_max=1, hidden=8, n_layers=1, n_heads=2, n_bins=4, seed=0)
FAST = TrainConfig(steps=4, tasks_per_step=2, queries_per_task=2, ctx_range=(4, 8),
                   checkpoint_every=2)


def fake_task(e, c, ctx_events):
    return SimpleNamespace(
        query_event_times=np.asarray(e, dtype=float),
        query_censor_times=np.asarray(c, dtype=float),
        context=SimpleNamespace(events=np.asarray(ctx_events)),
    )


def random_dataset(seed: int, n: int = 40) -> SurvivalDataset:
    g = RngStream(seed).derive("val-ds").generator()
    x = g.standard_normal((n, 1))
    times = g.lognormal(0.0, 0.7, n) + 0.05
    events = (g.uniform(size=n) < 0.7).astype(int)
    events[0] = 1
    return SurvivalDataset(x, times, events)


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(ctx_range=(2, 64))
    with pytest.raises(ConfigError):
        TrainConfig(ctx_range=(64, 4096))
    with pytest.raises(ConfigError):
        TrainConfig(loss="mse")
    with pytest.raises(ConfigError):
        TrainConfig(schedule="always")
    with pytest.raises(ConfigError):
        TrainConfig(loss="sce", sigma=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(checkpoint_every=0)


# ---------------------------------------------------------------------------
# target schedules


def test_event_only_schedule():
    task = fake_task([1.0, 2.0, 3.0], [9.0, 9.0, 9.0], [1, 0, 1])
    targets = make_query_targets("event_only", task, RngStream(0).derive("t"))
    assert [t.query_index for t in targets] == [0, 1, 2]
    assert all(t.indicator == 1 for t in targets)
    assert [t.time for t in targets] == [1.0, 2.0, 3.0]


def test_both_schedule_duplicates_queries():
    task = fake_task([1.0, 2.0], [5.0, 6.0], [1, 1])
    targets = make_query_targets("both", task, RngStream(0).derive("t"))
    assert [(t.query_index, t.indicator, t.time) for t in targets] == [
        (0, 0, 5.0), (0, 1, 1.0), (1, 0, 6.0), (1, 1, 2.0),
    ]


def test_random_schedule_tracks_context_event_rate():
    # uniform draws on [0,1) are always < 1 and never < 0, so extreme
    # context rates pin the indicator
    all_events = fake_task([1.0] * 6, [2.0] * 6, [1, 1, 1])
    targets = make_query_targets("random", all_events, RngStream(4).derive("t"))
    assert all(t.indicator == 1 and t.time == 1.0 for t in targets)
    no_events = fake_task([1.0] * 6, [2.0] * 6, [0, 0, 0])
    targets = make_query_targets("random", no_events, RngStream(4).derive("t"))
    assert all(t.indicator == 0 and t.time == 2.0 for t in targets)


def test_random_schedule_is_stream_deterministic():
    task = fake_task([1.0] * 20, [2.0] * 20, [1, 0])
    a = make_query_targets("random", task, RngStream(9).derive("t"))
    b = make_query_targets("random", task, RngStream(9).derive("t"))
    assert [(t.indicator, t.time) for t in a] == [(t.indicator, t.time) for t in b]
    inds = {t.indicator for t in a}
    assert inds == {0, 1}  # p = 0.5 over 20 draws mixes both


def test_schedule_rejects_empty_queries():
    task = fake_task([], [], [1])
    with pytest.raises(ConfigError):
        make_query_targets("event_only", task, RngStream(0).derive("t"))


# ---------------------------------------------------------------------------
# optimizer


def test_adamw_first_step_formula():
    g = np.array([0.5, -2.0, 0.0])
    p = np.array([1.0, 1.0, 1.0])
    state = AdamState.zeros(3)
    out = adamw_update(state, p, g, lr=0.1, weight_decay=0.01)
    m_hat = g
    v_hat = g * g
    want = p - 0.1 * (m_hat / (np.sqrt(v_hat) + 1e-8) + 0.01 * p)
    np.testing.assert_allclose(out, want, atol=1e-15)
    assert state.t == 1


def test_adamw_decay_is_decoupled():
    # zero gradients leave the moment estimates at zero; only the decay
    # term moves the parameters
    p = np.array([2.0, -4.0])
    out = adamw_update(AdamState.zeros(2), p, np.zeros(2), lr=0.5, weight_decay=0.1)
    np.testing.assert_allclose(out, p - 0.5 * 0.1 * p, atol=1e-15)


def test_adamw_two_steps_match_reference_loop():
    g1 = np.array([0.3, -1.0])
    g2 = np.array([-0.2, 0.4])
    p = np.array([0.5, 0.5])
    state = AdamState.zeros(2)
    p1 = adamw_update(state, p, g1, lr=0.01, weight_decay=0.0)
    p2 = adamw_update(state, p1, g2, lr=0.01, weight_decay=0.0)

    m = 0.1 * g1
    v = 0.001 * g1 * g1
    q = p - 0.01 * (m / (1 - 0.9) / (np.sqrt(v / (1 - 0.999)) + 1e-8))
    m = 0.9 * m + 0.1 * g2
    v = 0.999 * v + 0.001 * g2 * g2
    q = q - 0.01 * ((m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8))
    np.testing.assert_allclose(p2, q, atol=1e-15)
    assert state.t == 2


# ---------------------------------------------------------------------------
# train_step


def test_first_step_loss_is_log_bins():
    # zero head => exactly uniform predictions before any update
    model = SurvivalPFN(TINY)
    prior = SimpleExponentialPrior()
    loss = train_step(model, prior, AdamState.zeros(model.n_params), FAST,
                      RngStream(0).derive("step", 0))
    assert abs(loss - math.log(TINY.n_bins)) < 1e-12


def test_train_step_updates_parameters():
    model = SurvivalPFN(TINY)
    before = model.get_flat().copy()
    train_step(model, SimpleExponentialPrior(), AdamState.zeros(model.n_params),
               FAST, RngStream(0).derive("step", 0))
    assert not np.array_equal(model.get_flat(), before)


def test_train_step_flags_nonfinite_loss():
    model = SurvivalPFN(TINY)
    flat = model.get_flat()
    flat[-1] = np.nan  # head bias NaN poisons the softmax
    model.set_flat(flat)
    with pytest.raises(NumericError):
        with np.errstate(invalid="ignore"):
            train_step(model, SimpleExponentialPrior(), AdamState.zeros(model.n_params),
                       FAST, RngStream(0).derive("step", 0))


def test_transform_never_sees_query_latents(monkeypatch):
    fitted: list[np.ndarray] = []
    real_fit = train_mod.fit_transform

    def recording_fit(kind, times):
        fitted.append(np.asarray(times, dtype=float).copy())
        return real_fit(kind, times)

    contexts: list[np.ndarray] = []
    queries: list[np.ndarray] = []

    class RecordingPrior(SimpleExponentialPrior):
        def sample_task(self, rng, n_ctx, n_query):
            task = super().sample_task(rng, n_ctx, n_query)
            contexts.append(np.asarray(task.context.times))
            queries.append(np.asarray(task.query_event_times))
            return task

    monkeypatch.setattr(train_mod, "fit_transform", recording_fit)
    model = SurvivalPFN(TINY)
    state = AdamState.zeros(model.n_params)
    for step in range(2):
        train_step(model, RecordingPrior(), state, FAST, RngStream(0).derive("step", step))

    assert len(fitted) == len(contexts) == 4  # 2 steps x 2 tasks
    for fit_times, ctx_times in zip(fitted, contexts):
        np.testing.assert_array_equal(fit_times, ctx_times)
    query_pool = np.concatenate(queries)
    for fit_times in fitted:
        assert not np.isin(query_pool, fit_times).any()


# ---------------------------------------------------------------------------
# train loop


def test_train_is_deterministic():
    results = []
    flats = []
    for _ in range(2):
        model = SurvivalPFN(TINY)
        res = train(model, SimpleExponentialPrior(), FAST)
        results.append([h["loss"] for h in res.history])
        flats.append(model.get_flat())
    assert results[0] == results[1]
    np.testing.assert_array_equal(flats[0], flats[1])


def test_train_history_covers_every_step():
    model = SurvivalPFN(TINY)
    res = train(model, SimpleExponentialPrior(), FAST)
    assert [h["step"] for h in res.history] == [0, 1, 2, 3]
    assert res.checkpoints == [] and res.best_checkpoint is None


def test_train_writes_checkpoints_and_log(tmp_path):
    model = SurvivalPFN(TINY)
    res = train(model, SimpleExponentialPrior(), FAST, out_dir=tmp_path,
                clock=lambda: 0.0)
    names = [os.path.basename(p) for p in res.checkpoints]
    assert names == ["ckpt_000001.spfn", "ckpt_000003.spfn"]
    for p in res.checkpoints:
        assert os.path.exists(p) and os.path.exists(p + ".opt.npz")
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 4
    for i, line in enumerate(lines):
        entry = json.loads(line)
        assert entry == {"step": i, "loss": entry["loss"], "wall_time": 0.0, "seed": 0}


def test_resume_replays_the_uninterrupted_run(tmp_path):
    cfg = TrainConfig(steps=6, tasks_per_step=2, queries_per_task=2,
                      ctx_range=(4, 8), checkpoint_every=2)
    full = SurvivalPFN(TINY)
    full_res = train(full, SimpleExponentialPrior(), cfg, out_dir=tmp_path / "a")

    resumed = SurvivalPFN(TINY)
    mid = str(tmp_path / "a" / "ckpt_000003.spfn")
    res = train(resumed, SimpleExponentialPrior(), cfg, resume_from=mid)
    np.testing.assert_array_equal(resumed.get_flat(), full.get_flat())
    assert [h["step"] for h in res.history] == [4, 5]
    assert [h["loss"] for h in res.history] == [h["loss"] for h in full_res.history[4:]]


def test_resume_rejects_other_architectures(tmp_path):
    model = SurvivalPFN(TINY)
    train(model, SimpleExponentialPrior(), FAST, out_dir=tmp_path)
    other = SurvivalPFN(ModelConfig(d_max=1, hidden=8, n_layers=1, n_heads=2, n_bins=8))
    with pytest.raises(ConfigError):
        train(other, SimpleExponentialPrior(), FAST,
              resume_from=str(tmp_path / "ckpt_000003.spfn"))


def test_keep_last_evicts_old_checkpoints(tmp_path):
    cfg = TrainConfig(steps=6, tasks_per_step=1, queries_per_task=1,
                      ctx_range=(4, 6), checkpoint_every=1, keep_last=2)
    res = train(SurvivalPFN(TINY), SimpleExponentialPrior(), cfg, out_dir=tmp_path)
    names = [os.path.basename(p) for p in res.checkpoints]
    assert names == ["ckpt_000004.spfn", "ckpt_000005.spfn"]
    on_disk = sorted(p.name for p in tmp_path.glob("*.spfn"))
    assert on_disk == ["ckpt_000004.spfn", "ckpt_000005.spfn"]


def test_best_checkpoint_survives_eviction(tmp_path, monkeypatch):
    # force the first checkpoint to score best so eviction must spare it
    scores = iter([0.01, 0.5, 0.6, 0.7, 0.8, 0.9])
    monkeypatch.setattr(train_mod, "weighted_ibs", lambda *a, **k: next(scores))
    cfg = TrainConfig(steps=6, tasks_per_step=1, queries_per_task=1,
                      ctx_range=(4, 6), checkpoint_every=1, keep_last=2)
    res = train(SurvivalPFN(TINY), SimpleExponentialPrior(), cfg,
                out_dir=tmp_path, validation=[random_dataset(0)])
    assert os.path.basename(res.best_checkpoint) == "ckpt_000000.spfn"
    assert res.best_score == 0.01
    on_disk = sorted(p.name for p in tmp_path.glob("*.spfn"))
    assert on_disk == ["ckpt_000000.spfn", "ckpt_000004.spfn", "ckpt_000005.spfn"]


# ---------------------------------------------------------------------------
# checkpoint scoring


def test_combine_weighted_scores_example():
    # sqrt weights: (2*0.2 + 4*0.1) / 6
    val = combine_weighted_scores([4, 16], [0.2, 0.1])
    assert abs(val - 0.13333333333333333) < 1e-12


def test_combine_weighted_scores_single_and_errors():
    assert combine_weighted_scores([7], [0.4]) == 0.4
    with pytest.raises(ConfigError):
        combine_weighted_scores([], [])
    with pytest.raises(ConfigError):
        combine_weighted_scores([1, 2], [0.1])
    with pytest.raises(ConfigError):
        combine_weighted_scores([0, 2], [0.1, 0.2])


def test_weighted_ibs_matches_manual_combination():
    model = SurvivalPFN(TINY)
    d1, d2 = random_dataset(1), random_dataset(2, n=60)
    v1 = weighted_ibs(model, [d1])
    v2 = weighted_ibs(model, [d2])
    both = weighted_ibs(model, [d1, d2])
    want = combine_weighted_scores([d1.n, d2.n], [v1, v2])
    assert 0.0 < both < 1.0
    assert abs(both - want) < 1e-12


def test_select_checkpoint_tie_and_failure(tmp_path):
    a = tmp_path / "a.spfn"
    b = tmp_path / "b.spfn"
    bad = tmp_path / "bad.spfn"
    model = SurvivalPFN(TINY)
    save_checkpoint(model, a)
    save_checkpoint(model, b)  # identical params: an exact score tie
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    paths = [str(a), str(b), str(bad)]
    best, scores = select_checkpoint(paths, [random_dataset(3)])
    assert best == str(a)  # first index wins the tie
    assert scores[0] == scores[1]
    assert scores[2] == float("inf")


def test_select_checkpoint_rejects_empty_inputs(tmp_path):
    with pytest.raises(ConfigError):
        select_checkpoint([], [random_dataset(0)])
    p = tmp_path / "a.spfn"
    save_checkpoint(SurvivalPFN(TINY), p)
    with pytest.raises(ConfigError):
        select_checkpoint([str(p)], [])
