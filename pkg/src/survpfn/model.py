"""In-context transformer over survival tokens with histogram outputs.

Tokens are built from context rows (x_i, t_i, delta_i) and query rows
(x*, query indicator); the attention pattern is asymmetric: every token
attends to the context set only, so context order cannot matter and each
query's prediction is conditionally independent of the other queries.
The head projects query tokens to logits over L time bins; a softmax
yields the histogram whose tail sums form the predicted survival curve.

Everything runs in float64 with hand-written reverse-mode gradients
(verified against central finite differences in the test suite).  A
deterministic summation mode replaces BLAS reductions over the context
axis with correctly-rounded math.fsum and per-token matvecs, giving
bit-identical outputs under context permutation and query add/remove.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import erf, ndtr

from .errors import CheckpointError, ConfigError, DataError, NumericError
from .rng import RngStream
from .timewarp import (
    Binner,
    TimeTransform,
    bin_upper_times,
    fit_transform,
    make_binner,
)

_LN_EPS = 1e-8
_RMS_EPS = 1e-8
_CHECKPOINT_MAGIC = b"SPFN"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (toy defaults; paper scale reachable)."""

    d_max: int = 20
    hidden: int = 64
    n_layers: int = 3
    n_heads: int = 2
    n_bins: int = 64
    ff_width: int | None = None  # defaults to 4 * hidden
    qk_norm: bool = False
    swiglu: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden % self.n_heads != 0:
            raise ConfigError(
                f"hidden={self.hidden} not divisible by n_heads={self.n_heads}"
            )
        if self.n_bins < 2:
            raise ConfigError(f"n_bins must be >= 2, got {self.n_bins}")
        if min(self.d_max, self.hidden, self.n_layers, self.n_heads) < 1:
            raise ConfigError("d_max, hidden, n_layers, n_heads must be >= 1")
        if self.ff_width is not None and self.ff_width < 1:
            raise ConfigError("ff_width must be >= 1")

    @property
    def ff(self) -> int:
        return self.ff_width if self.ff_width is not None else 4 * self.hidden

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) in canonical flattening order."""
    h, f, L = cfg.hidden, cfg.ff, cfg.n_bins
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("embed.cov_w", (cfg.d_max, h), "xavier"),
        ("embed.time_w", (h,), "small"),
        ("embed.time_b", (h,), "zeros"),
        ("embed.event", (2, h), "small"),
        ("embed.query", (2, h), "small"),
    ]
    for i in range(cfg.n_layers):
        p = f"block{i}."
        specs += [
            (p + "ln1.g", (h,), "ones"),
            (p + "ln1.b", (h,), "zeros"),
            (p + "attn.wq", (h, h), "xavier"),
            (p + "attn.bq", (h,), "zeros"),
            (p + "attn.wk", (h, h), "xavier"),
            (p + "attn.bk", (h,), "zeros"),
            (p + "attn.wv", (h, h), "xavier"),
            (p + "attn.bv", (h,), "zeros"),
        ]
        if cfg.qk_norm:
            specs += [(p + "attn.qg", (h,), "ones"), (p + "attn.kg", (h,), "ones")]
        specs += [
            (p + "attn.wo", (h, h), "xavier"),
            (p + "attn.bo", (h,), "zeros"),
            (p + "ln2.g", (h,), "ones"),
            (p + "ln2.b", (h,), "zeros"),
            (p + "ff.w1", (h, f), "xavier"),
            (p + "ff.b1", (f,), "zeros"),
        ]
        if cfg.swiglu:
            specs += [(p + "ff.wg", (h, f), "xavier"), (p + "ff.bg", (f,), "zeros")]
        specs += [(p + "ff.w2", (f, h), "xavier"), (p + "ff.b2", (h,), "zeros")]
    specs += [
        ("final_ln.g", (h,), "ones"),
        ("final_ln.b", (h,), "zeros"),
        ("head.w", (h, L), "zeros"),  # zero head => exactly uniform start
        ("head.b", (L,), "zeros"),
    ]
    return specs


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    root = RngStream(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in _param_specs(cfg):
        if kind == "zeros":
            params[name] = np.zeros(shape)
        elif kind == "ones":
            params[name] = np.ones(shape)
        else:
            g = root.derive("param", name).generator()
            if kind == "xavier":
                std = math.sqrt(2.0 / (shape[0] + shape[-1]))
            else:  # small
                std = 0.5
            params[name] = g.normal(0.0, std, size=shape)
    return params


class SurvivalPFN:
    """Parameter container; all compute lives in module-level functions."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = [(n, s) for n, s, _ in _param_specs(config)]
        actual = [(n, tuple(p.shape)) for n, p in self.params.items()]
        if expected != actual:
            raise ConfigError("parameter set does not match the configuration")

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ConfigError(f"expected flat vector of length {self.n_params}")
        offset = 0
        for p in self.params.values():
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size


@dataclass(eq=False)
class TokenBatch:
    """Embedded context/query tokens plus the raw inputs needed for grads."""

    ctx: np.ndarray  # (n_ctx, H) embedded context tokens
    qry: np.ndarray  # (n_q, H) embedded query tokens
    x_ctx: np.ndarray  # (n_ctx, d_max) padded covariates
    z_ctx: np.ndarray  # (n_ctx,) transformed times
    delta_ctx: np.ndarray  # (n_ctx,) event indicators in {0,1}
    x_qry: np.ndarray  # (n_q, d_max) padded covariates
    ind_qry: np.ndarray  # (n_q,) query indicators in {0,1}
    scale: float  # covariate validity scale 1/sqrt(d_effective)

    @property
    def n_ctx(self) -> int:
        return self.ctx.shape[0]

    @property
    def n_query(self) -> int:
        return self.qry.shape[0]

    @property
    def roles(self) -> np.ndarray:
        """0 for context tokens, 1 for query tokens."""
        return np.concatenate([np.zeros(self.n_ctx, int), np.ones(self.n_query, int)])


@dataclass(eq=False)
class GradientBundle:
    """Flat parameters with the matching flat gradient vector."""

    params: np.ndarray
    grads: np.ndarray
    size: int

    def __post_init__(self) -> None:
        if self.params.shape != self.grads.shape or self.params.shape != (self.size,):
            raise ConfigError("gradient length must equal parameter length")


def _pad_covariates(x: np.ndarray, d_max: int) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"covariates must be 2-D, got shape {x.shape}")
    d = x.shape[1]
    if d > d_max:
        raise DataError(
            f"covariate dimension {d} exceeds the model's d_max={d_max}; "
            "reduce features or train a wider model"
        )
    if d < 1:
        raise DataError("need at least 1 covariate column")
    pad = np.zeros((x.shape[0], d_max))
    pad[:, :d] = x
    return pad, 1.0 / math.sqrt(d)


def _as_binary(v, name: str) -> np.ndarray:
    v = np.asarray(v)
    if not np.all(np.isin(v, (0, 1))):
        raise DataError(f"{name} must be 0/1")
    return v.astype(np.intp)


def embed_tokens(model: SurvivalPFN, context, queries) -> TokenBatch:
    """Embed (x_i, z_i, delta_i) context rows and (x*, indicator) queries.

    ``context`` is a triple (x, z_times, events) with times already in
    model space; ``queries`` is a pair (x*, indicators).  Embeddings are
    sums of linear maps: no positional information enters any token.
    """
    x_ctx, z_ctx, delta = context
    x_qry, ind = queries
    x_ctx = np.asarray(x_ctx, dtype=np.float64)
    x_qry = np.asarray(x_qry, dtype=np.float64)
    if x_ctx.ndim != 2 or x_qry.ndim != 2 or x_ctx.shape[1] != x_qry.shape[1]:
        raise DataError("context and query covariates must share a column count")
    z_ctx = np.asarray(z_ctx, dtype=np.float64)
    delta = _as_binary(delta, "events")
    ind = _as_binary(ind, "query indicators")
    p = model.params
    xc, scale = _pad_covariates(x_ctx, model.config.d_max)
    xq, _ = _pad_covariates(x_qry, model.config.d_max)
    ctx = (
        scale * (xc @ p["embed.cov_w"])
        + z_ctx[:, None] * p["embed.time_w"]
        + p["embed.time_b"]
        + p["embed.event"][delta]
    )
    qry = scale * (xq @ p["embed.cov_w"]) + p["embed.query"][ind]
    return TokenBatch(ctx, qry, xc, z_ctx, delta, xq, ind, scale)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * invstd
    return xhat * g + b, (xhat, invstd)


def _layer_norm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, invstd = cache
    dg = np.sum(dy * xhat, axis=0)
    db = np.sum(dy, axis=0)
    dxh = dy * g
    dx = invstd * (
        dxh
        - np.mean(dxh, axis=-1, keepdims=True)
        - xhat * np.mean(dxh * xhat, axis=-1, keepdims=True)
    )
    return dx, dg, db


def _rms_norm(x: np.ndarray, g: np.ndarray):
    """x: (heads, n, dk); g: (heads, 1, dk)."""
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _RMS_EPS)
    return (x / r) * g, r


def _rms_norm_backward(dy: np.ndarray, x: np.ndarray, r: np.ndarray, g: np.ndarray):
    dk = x.shape[-1]
    dg = np.sum(dy * x / r, axis=1, keepdims=True)
    gdy = dy * g
    dx = gdy / r - x * np.sum(gdy * x, axis=-1, keepdims=True) / (dk * r**3)
    return dx, dg


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(
        2.0 * math.pi
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, h = x.shape
    return x.reshape(n, n_heads, h // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    heads, n, dk = x.shape
    return x.transpose(1, 0, 2).reshape(n, heads * dk)


def _forward_cached(model: SurvivalPFN, batch: TokenBatch):
    """Vectorized forward returning (probs, logits, cache) for backward."""
    cfg, p = model.config, model.params
    nc = batch.n_ctx
    if nc < 1:
        raise DataError("forward needs at least 1 context token")
    if batch.n_query < 1:
        raise DataError("forward needs at least 1 query token")
    h = np.concatenate([batch.ctx, batch.qry], axis=0)
    alpha = 1.0 / math.sqrt(cfg.head_dim)
    blocks = []
    for i in range(cfg.n_layers):
        pre = f"block{i}."
        c: dict = {"h_in": h}
        x1, c["ln1"] = _layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
        c["x1"] = x1
        q = _split_heads(x1 @ p[pre + "attn.wq"] + p[pre + "attn.bq"], cfg.n_heads)
        k = _split_heads(x1[:nc] @ p[pre + "attn.wk"] + p[pre + "attn.bk"], cfg.n_heads)
        v = _split_heads(x1[:nc] @ p[pre + "attn.wv"] + p[pre + "attn.bv"], cfg.n_heads)
        c["q_raw"], c["k_raw"] = q, k
        if cfg.qk_norm:
            qg = p[pre + "attn.qg"].reshape(cfg.n_heads, 1, cfg.head_dim)
            kg = p[pre + "attn.kg"].reshape(cfg.n_heads, 1, cfg.head_dim)
            q, c["q_r"] = _rms_norm(q, qg)
            k, c["k_r"] = _rms_norm(k, kg)
        c["q"], c["k"], c["v"] = q, k, v
        scores = alpha * (q @ k.transpose(0, 2, 1))
        smax = np.max(scores, axis=-1, keepdims=True)
        e = np.exp(scores - smax)
        att = e / np.sum(e, axis=-1, keepdims=True)
        c["att"] = att
        premix = _merge_heads(att @ v)
        c["premix"] = premix
        h = h + premix @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
        c["h_mid"] = h
        x2, c["ln2"] = _layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
        c["x2"] = x2
        u1 = x2 @ p[pre + "ff.w1"] + p[pre + "ff.b1"]
        c["u1"] = u1
        if cfg.swiglu:
            ug = x2 @ p[pre + "ff.wg"] + p[pre + "ff.bg"]
            sg = _sigmoid(ug)
            a = (ug * sg) * u1
            c["ug"], c["sg"] = ug, sg
        else:
            a = _gelu(u1)
        c["a"] = a
        h = h + a @ p[pre + "ff.w2"] + p[pre + "ff.b2"]
        blocks.append(c)
    hf, ln_f = _layer_norm(h, p["final_ln.g"], p["final_ln.b"])
    logits = hf[nc:] @ p["head.w"] + p["head.b"]
    lmax = np.max(logits, axis=-1, keepdims=True)
    el = np.exp(logits - lmax)
    probs = el / np.sum(el, axis=-1, keepdims=True)
    cache = {"blocks": blocks, "ln_f": ln_f, "hf": hf, "logits": logits, "probs": probs}
    return probs, logits, cache


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


def _matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-call matvec with shape-independent reduction order."""
    return np.array([_dot(row, x) for row in m])


def _fsum_vecs(vecs: list[np.ndarray]) -> np.ndarray:
    """Correctly-rounded per-component sum over a list of equal-size vectors."""
    stack = np.stack(vecs, axis=0)
    return np.array([math.fsum(stack[:, j]) for j in range(stack.shape[1])])


def _forward_deterministic(model: SurvivalPFN, batch: TokenBatch) -> np.ndarray:
    """Loop-based forward with order-independent context reductions.

    Context-axis sums go through math.fsum (correctly rounded, hence
    permutation-invariant); all other contractions are fixed-shape
    per-token matvecs whose result cannot depend on which other tokens
    are present.  Output is bit-identical under context permutation and
    under adding/removing other query tokens.
    """
    cfg, p = model.config, model.params
    nc, nq = batch.n_ctx, batch.n_query
    if nc < 1 or nq < 1:
        raise DataError("forward needs at least 1 context and 1 query token")
    heads, dk = cfg.n_heads, cfg.head_dim
    alpha = 1.0 / math.sqrt(dk)

    def embed_ctx(i: int) -> np.ndarray:
        return (
            batch.scale * _matvec(p["embed.cov_w"].T, batch.x_ctx[i])
            + batch.z_ctx[i] * p["embed.time_w"]
            + p["embed.time_b"]
            + p["embed.event"][batch.delta_ctx[i]]
        )

    def embed_qry(i: int) -> np.ndarray:
        return batch.scale * _matvec(p["embed.cov_w"].T, batch.x_qry[i]) + p[
            "embed.query"
        ][batch.ind_qry[i]]

    def ln(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
        mu = math.fsum(x) / x.size
        var = math.fsum((x - mu) ** 2) / x.size
        return (x - mu) / math.sqrt(var + _LN_EPS) * g + b

    def rms(x: np.ndarray, g: np.ndarray) -> np.ndarray:
        r = math.sqrt(math.fsum(x * x) / x.size + _RMS_EPS)
        return x / r * g

    tokens = [embed_ctx(i) for i in range(nc)] + [embed_qry(i) for i in range(nq)]
    for i_block in range(cfg.n_layers):
        pre = f"block{i_block}."
        x1 = [ln(t, p[pre + "ln1.g"], p[pre + "ln1.b"]) for t in tokens]
        kv = []
        for j in range(nc):
            k = _matvec(p[pre + "attn.wk"].T, x1[j]) + p[pre + "attn.bk"]
            v = _matvec(p[pre + "attn.wv"].T, x1[j]) + p[pre + "attn.bv"]
            k = k.reshape(heads, dk)
            if cfg.qk_norm:
                kg = p[pre + "attn.kg"].reshape(heads, dk)
                k = np.stack([rms(k[h], kg[h]) for h in range(heads)])
            kv.append((k, v.reshape(heads, dk)))
        new_tokens = []
        for i, tok in enumerate(tokens):
            q = (_matvec(p[pre + "attn.wq"].T, x1[i]) + p[pre + "attn.bq"]).reshape(
                heads, dk
            )
            if cfg.qk_norm:
                qg = p[pre + "attn.qg"].reshape(heads, dk)
                q = np.stack([rms(q[h], qg[h]) for h in range(heads)])
            premix = np.empty(cfg.hidden)
            for h in range(heads):
                scores = np.array([alpha * _dot(q[h], kv[j][0][h]) for j in range(nc)])
                m = float(np.max(scores))
                w = np.exp(scores - m)
                denom = math.fsum(w)
                att = w / denom
                head_out = _fsum_vecs([att[j] * kv[j][1][h] for j in range(nc)])
                premix[h * dk : (h + 1) * dk] = head_out
            tok = tok + _matvec(p[pre + "attn.wo"].T, premix) + p[pre + "attn.bo"]
            x2 = ln(tok, p[pre + "ln2.g"], p[pre + "ln2.b"])
            u1 = _matvec(p[pre + "ff.w1"].T, x2) + p[pre + "ff.b1"]
            if cfg.swiglu:
                ug = _matvec(p[pre + "ff.wg"].T, x2) + p[pre + "ff.bg"]
                a = (ug * _sigmoid(ug)) * u1
            else:
                a = _gelu(u1)
            tok = tok + _matvec(p[pre + "ff.w2"].T, a) + p[pre + "ff.b2"]
            new_tokens.append(tok)
        tokens = new_tokens
    probs = np.empty((nq, cfg.n_bins))
    for i in range(nq):
        hf = ln(tokens[nc + i], p["final_ln.g"], p["final_ln.b"])
        logits = np.array(
            [_dot(hf, p["head.w"][:, l]) + p["head.b"][l] for l in range(cfg.n_bins)]
        )
        e = np.exp(logits - np.max(logits))
        probs[i] = e / np.sum(e)
    return probs


def forward(model: SurvivalPFN, batch: TokenBatch, deterministic: bool = False) -> np.ndarray:
    """Histogram predictions (n_q, L), one simplex vector per query."""
    if deterministic:
        return _forward_deterministic(model, batch)
    probs, _, _ = _forward_cached(model, batch)
    return probs


def nll_loss(pred: np.ndarray, target_bin: int) -> float:
    """Discrete negative log-likelihood -log q_l of a 1-based bin index."""
    pred = np.asarray(pred, dtype=np.float64)
    L = pred.shape[-1]
    if not 1 <= target_bin <= L:
        raise DataError(f"target bin {target_bin} outside 1..{L}")
    return float(-np.log(pred[..., target_bin - 1]))


def sce_targets(
    raw_times: np.ndarray,
    sigma: float,
    transform: TimeTransform,
    binner: Binner,
) -> np.ndarray:
    """Gaussian-smoothed histogram targets, one simplex row per time.

    Mass is the Gaussian CDF difference across each bin's model-space
    edges, with both tails clamped into the boundary bins (the same
    convention the bin index uses), then renormalized.
    """
    if not sigma > 0:
        raise DataError("smoothing sigma must be positive")
    z = np.asarray(transform.forward(np.asarray(raw_times, dtype=np.float64)))
    z = np.atleast_1d(z)
    L = binner.n_bins
    targets = np.zeros((z.size, L))
    finite = np.isfinite(z)
    if np.any(~finite):
        # g(0) = -inf under lognormal2normal: all mass in the first bin.
        targets[~finite, 0] = 1.0
    if np.any(finite):
        cdf = ndtr((binner.edges[None, :] - z[finite, None]) / sigma)
        a = np.diff(cdf, axis=1)
        a[:, 0] += cdf[:, 0]
        a[:, -1] += 1.0 - cdf[:, -1]
        targets[finite] = a / np.sum(a, axis=1, keepdims=True)
    return targets


def sce_loss(
    pred: np.ndarray,
    raw_time: float,
    sigma: float,
    transform: TimeTransform,
    binner: Binner,
) -> float:
    """Smoothed cross-entropy against the Gaussian bin-mass target."""
    a = sce_targets(np.array([raw_time]), sigma, transform, binner)[0]
    return float(-np.sum(a * np.log(np.asarray(pred, dtype=np.float64))))


def _target_distributions(
    model: SurvivalPFN,
    targets,
    loss: str,
    sigma: float | None,
    transform: TimeTransform | None,
    binner: Binner | None,
) -> np.ndarray:
    L = model.config.n_bins
    if loss == "nll":
        bins = np.asarray(targets)
        if bins.ndim != 1:
            raise DataError("nll targets must be a vector of 1-based bin indices")
        if np.any(bins < 1) or np.any(bins > L):
            raise DataError(f"target bins outside 1..{L}")
        dists = np.zeros((bins.size, L))
        dists[np.arange(bins.size), bins.astype(int) - 1] = 1.0
        return dists
    if loss == "sce":
        if sigma is None or transform is None or binner is None:
            raise ConfigError("sce loss needs sigma, transform, and binner")
        return sce_targets(np.asarray(targets, dtype=np.float64), sigma, transform, binner)
    raise ConfigError(f"unknown loss kind {loss!r}")


def backward(
    model: SurvivalPFN,
    batch: TokenBatch,
    targets,
    loss: str = "nll",
    sigma: float | None = None,
    transform: TimeTransform | None = None,
    binner: Binner | None = None,
) -> tuple[float, GradientBundle]:
    """Mean per-query loss and its exact gradient for every parameter.

    ``targets`` is a vector of 1-based bin indices for ``loss="nll"`` or
    raw target times for ``loss="sce"`` (smoothed via sigma/transform/
    binner).  One target per query token, in batch order.
    """
    cfg, p = model.config, model.params
    nc, nq = batch.n_ctx, batch.n_query
    a = _target_distributions(model, targets, loss, sigma, transform, binner)
    if a.shape[0] != nq:
        raise DataError(f"expected {nq} targets, got {a.shape[0]}")
    probs, logits, cache = _forward_cached(model, batch)
    loss_value = float(-np.sum(a * np.log(probs)) / nq)

    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    dlogits = (probs - a) / nq
    hf = cache["hf"]
    grads["head.w"] += hf[nc:].T @ dlogits
    grads["head.b"] += np.sum(dlogits, axis=0)
    dhf = np.zeros_like(hf)
    dhf[nc:] = dlogits @ p["head.w"].T
    dh, dg, db = _layer_norm_backward(dhf, cache["ln_f"], p["final_ln.g"])
    grads["final_ln.g"] += dg
    grads["final_ln.b"] += db

    alpha = 1.0 / math.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.n_layers)):
        pre = f"block{i}."
        c = cache["blocks"][i]
        # feed-forward sublayer
        da = dh @ p[pre + "ff.w2"].T
        grads[pre + "ff.w2"] += c["a"].T @ dh
        grads[pre + "ff.b2"] += np.sum(dh, axis=0)
        if cfg.swiglu:
            ug, sg, u1 = c["ug"], c["sg"], c["u1"]
            silu = ug * sg
            du1 = da * silu
            dug = da * u1 * (sg * (1.0 + ug * (1.0 - sg)))
            grads[pre + "ff.wg"] += c["x2"].T @ dug
            grads[pre + "ff.bg"] += np.sum(dug, axis=0)
            dx2 = du1 @ p[pre + "ff.w1"].T + dug @ p[pre + "ff.wg"].T
        else:
            du1 = da * _gelu_grad(c["u1"])
            dx2 = du1 @ p[pre + "ff.w1"].T
        grads[pre + "ff.w1"] += c["x2"].T @ du1
        grads[pre + "ff.b1"] += np.sum(du1, axis=0)
        dmid, dg, db = _layer_norm_backward(dx2, c["ln2"], p[pre + "ln2.g"])
        grads[pre + "ln2.g"] += dg
        grads[pre + "ln2.b"] += db
        dh = dh + dmid
        # attention sublayer
        grads[pre + "attn.wo"] += c["premix"].T @ dh
        grads[pre + "attn.bo"] += np.sum(dh, axis=0)
        dpremix = _split_heads(dh @ p[pre + "attn.wo"].T, cfg.n_heads)
        att, q, k, v = c["att"], c["q"], c["k"], c["v"]
        datt = dpremix @ v.transpose(0, 2, 1)
        dv = att.transpose(0, 2, 1) @ dpremix
        dscores = att * (datt - np.sum(datt * att, axis=-1, keepdims=True))
        dq = alpha * (dscores @ k)
        dk = alpha * (dscores.transpose(0, 2, 1) @ q)
        if cfg.qk_norm:
            qg = p[pre + "attn.qg"].reshape(cfg.n_heads, 1, cfg.head_dim)
            kg = p[pre + "attn.kg"].reshape(cfg.n_heads, 1, cfg.head_dim)
            dq, dqg = _rms_norm_backward(dq, c["q_raw"], c["q_r"], qg)
            dk, dkg = _rms_norm_backward(dk, c["k_raw"], c["k_r"], kg)
            grads[pre + "attn.qg"] += dqg.ravel()
            grads[pre + "attn.kg"] += dkg.ravel()
        dq_flat, dk_flat, dv_flat = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        x1 = c["x1"]
        grads[pre + "attn.wq"] += x1.T @ dq_flat
        grads[pre + "attn.bq"] += np.sum(dq_flat, axis=0)
        grads[pre + "attn.wk"] += x1[:nc].T @ dk_flat
        grads[pre + "attn.bk"] += np.sum(dk_flat, axis=0)
        grads[pre + "attn.wv"] += x1[:nc].T @ dv_flat
        grads[pre + "attn.bv"] += np.sum(dv_flat, axis=0)
        dx1 = dq_flat @ p[pre + "attn.wq"].T
        dx1[:nc] += dk_flat @ p[pre + "attn.wk"].T + dv_flat @ p[pre + "attn.wv"].T
        dtok, dg, db = _layer_norm_backward(dx1, c["ln1"], p[pre + "ln1.g"])
        grads[pre + "ln1.g"] += dg
        grads[pre + "ln1.b"] += db
        dh = dh + dtok

    # embedding gradients
    dctx, dqry = dh[:nc], dh[nc:]
    grads["embed.cov_w"] += batch.scale * (batch.x_ctx.T @ dctx + batch.x_qry.T @ dqry)
    grads["embed.time_w"] += batch.z_ctx @ dctx
    grads["embed.time_b"] += np.sum(dctx, axis=0)
    np.add.at(grads["embed.event"], batch.delta_ctx, dctx)
    np.add.at(grads["embed.query"], batch.ind_qry, dqry)

    flat_grads = np.concatenate([grads[name].ravel() for name in p])
    return loss_value, GradientBundle(model.get_flat(), flat_grads, model.n_params)


def ppsd_curve(pred: np.ndarray) -> np.ndarray:
    """Tail sums S_k = sum_{l>k} q_l for k = 0..L, scaled by the total mass.

    The division pins S_0 = 1 bit-exactly even when the input simplex
    sums to 1 only up to float rounding; monotone rounding keeps the
    curve nonincreasing, and S_L stays exactly 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    out = np.zeros(pred.shape[-1] + 1)
    tail = np.cumsum(pred[::-1])[::-1]
    out[:-1] = tail / tail[0] if tail[0] > 0 else tail
    return out


def ppsd(pred: np.ndarray, k: int) -> float:
    """Predicted survival past the k-th bin's upper edge (k=0: all mass)."""
    pred = np.asarray(pred, dtype=np.float64)
    L = pred.shape[-1]
    if not 0 <= k <= L:
        raise DataError(f"bin index {k} outside 0..{L}")
    return float(ppsd_curve(pred)[k])


def survival_on_grid(
    probs: np.ndarray, upper_times: np.ndarray, grid: np.ndarray
) -> np.ndarray:
    """Evaluate histogram tail-survival curves at raw-time grid points.

    S(t) sums the mass of bins whose raw upper edge exceeds t: a
    right-continuous step curve dropping at each bin edge, equal to 1
    before the first edge and 0 at or beyond the last.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    grid = np.asarray(grid, dtype=np.float64)
    csum = np.concatenate([np.zeros((probs.shape[0], 1)), np.cumsum(probs, axis=1)], axis=1)
    n_below = np.searchsorted(upper_times, grid, side="right")
    return 1.0 - csum[:, n_below]


def predict_survival(
    model: SurvivalPFN,
    context,
    x_query: np.ndarray,
    grid: np.ndarray,
    transform_kind: str = "time2quantile",
    deterministic: bool = False,
) -> np.ndarray:
    """In-context survival prediction: one forward pass, no fitting.

    ``context`` is (x, times, events) with raw nonnegative times (or any
    object exposing those attributes).  The time transform and binner
    are fitted on the context times only; every query is embedded with
    indicator 1 (event-time distribution) and the returned matrix holds
    right-continuous survival values at each grid point.
    """
    if hasattr(context, "times"):
        x_ctx, times, events = context.x, context.times, context.events
    else:
        x_ctx, times, events = context
    times = np.asarray(times, dtype=np.float64)
    if times.size < 1:
        raise DataError("empty context")
    transform = fit_transform(transform_kind, times)
    binner = make_binner(transform, model.config.n_bins)
    lo, hi = transform.model_range
    z = np.clip(np.asarray(transform.forward(times)), lo, hi)
    x_query = np.asarray(x_query, dtype=np.float64)
    batch = embed_tokens(
        model, (x_ctx, z, events), (x_query, np.ones(x_query.shape[0], int))
    )
    probs = forward(model, batch, deterministic=deterministic)
    if not np.all(np.isfinite(probs)):
        raise NumericError("non-finite prediction probabilities")
    uppers = bin_upper_times(binner, transform)
    return survival_on_grid(probs, uppers, np.asarray(grid, dtype=np.float64))


def save_checkpoint(model: SurvivalPFN, path, transform_kind: str = "time2quantile") -> None:
    """Write magic + version + JSON header + little-endian float64 params."""
    payload = model.get_flat().astype("<f8").tobytes()
    header = {
        "config": asdict(model.config),
        "transform": transform_kind,
        "n_params": model.n_params,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", _CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def load_checkpoint(path) -> tuple[SurvivalPFN, str]:
    """Load a checkpoint, verifying magic, version, and payload checksum."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    payload = blob[12 + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: parameter checksum mismatch")
    cfg = ModelConfig(**header["config"])
    model = SurvivalPFN(cfg)
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if flat.size != header["n_params"] or flat.size != model.n_params:
        raise CheckpointError(f"{path}: parameter count mismatch")
    model.set_flat(flat)
    return model, header["transform"]
