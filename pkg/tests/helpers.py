"""Shared seeded builders for the test suite.

Zero-initialized heads make every pre-head gradient exactly zero, so
model tests perturb parameters before checking anything gradient- or
output-shaped.  All randomness flows through RngStream so reruns are
bit-identical.
"""

from __future__ import annotations

import numpy as np

from survpfn.model import ModelConfig, SurvivalPFN, embed_tokens
from survpfn.rng import RngStream
from survpfn.timewarp import fit_transform, make_binner


def perturbed_model(cfg: ModelConfig, seed: int = 123, scale: float = 0.05) -> SurvivalPFN:
    model = SurvivalPFN(cfg)
    g = RngStream(seed).derive("perturb").generator()
    model.set_flat(model.get_flat() + scale * g.standard_normal(model.n_params))
    return model


def context_data(seed: int, n_ctx: int, d: int, lo: float = 0.5, hi: float = 10.0):
    """Covariates, positive raw times, and an event vector with >= 1 event."""
    g = RngStream(seed).derive("data").generator()
    x = g.standard_normal((n_ctx, d))
    times = g.uniform(lo, hi, n_ctx)
    events = g.integers(0, 2, n_ctx)
    if events.sum() == 0:
        events[0] = 1
    return x, times, events


def random_case(i: int):
    """One random (model, inputs) pair for architecture-invariant sweeps.

    Returns the model plus a dict of raw parts so tests can permute the
    context or subset the queries and re-embed.
    """
    g = RngStream(31).derive("case", i).generator()
    heads = int(g.integers(1, 3))
    hidden = int(g.choice([8, 16, 32]))
    if hidden % heads:
        hidden = heads * (hidden // heads)
    cfg = ModelConfig(
        d_max=int(g.integers(1, 6)),
        hidden=hidden,
        n_layers=int(g.integers(1, 3)),
        n_heads=heads,
        n_bins=int(g.choice([4, 8, 16])),
        seed=0,
    )
    model = SurvivalPFN(cfg)
    model.set_flat(model.get_flat() + 0.2 * g.standard_normal(model.n_params))
    n_ctx = int(g.integers(3, 11))
    n_q = int(g.integers(2, 5))
    d = int(g.integers(1, cfg.d_max + 1))  # d < d_max exercises padding
    x = g.standard_normal((n_ctx, d))
    times = g.uniform(0.1, 8.0, n_ctx)
    events = g.integers(0, 2, n_ctx)
    events[0] = 1
    kind = ("time2quantile", "lognormal2normal")[i % 2]
    transform = fit_transform(kind, times)
    zlo, zhi = transform.model_range
    z = np.clip(np.asarray(transform.forward(times)), zlo, zhi)
    x_q = g.standard_normal((n_q, d))
    ind = g.integers(0, 2, n_q)
    parts = {
        "x": x, "z": z, "events": events, "x_q": x_q, "ind": ind,
        "times": times, "transform": transform,
        "binner": make_binner(transform, cfg.n_bins), "gen": g,
    }
    return model, parts


def embed_parts(model: SurvivalPFN, parts: dict):
    return embed_tokens(
        model, (parts["x"], parts["z"], parts["events"]), (parts["x_q"], parts["ind"])
    )


def survival_data(seed: int, n: int = 50):
    """Right-censored sample with ties (rounded times) for metric tests."""
    g = RngStream(seed).derive("oracle-ds").generator()
    times = np.round(g.lognormal(0.5, 0.8, n), 1) + 0.1
    events = (g.uniform(size=n) < 0.65).astype(np.int64)
    if events.sum() == 0:
        events[0] = 1
    return times, events
