"""Random-MLP tabular generators.

Every synthetic prior family draws its covariates and hidden values from
small randomly initialized MLPs.  A generator is described by an
:class:`MlpSpec`; weights are a pure function of the spec's weight seed,
so the same spec applied to the same inputs always produces identical
outputs (bit-identical on the same platform).

Two modes exist.  Unconditional generation pushes standard Gaussian
latents through the network and standardizes each output column, giving
covariate tables of arbitrary width.  Conditional generation applies the
network to given covariate rows, each concatenated with a per-row noise
block scaled by the spec's noise level, giving stochastic conditional
values such as event or censoring times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import RngStream

ACTIVATIONS = ("tanh", "relu", "sine", "identity")

# Width of the per-row noise block appended to x in conditional mode.
COND_NOISE_DIM = 4

# Weight/bias scales: wider than Xavier so deep stacks stay expressive
# (saturating tanh units, off-center relu kinks) without overflowing.
_WEIGHT_GAIN = 1.5
_BIAS_STD = 0.5


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(h)
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "sine":
        return np.sin(h)
    if name == "identity":
        return h
    raise ConfigError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpSpec:
    """Immutable description of one random MLP."""

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    weight_seed: int
    noise_std: float

    def __post_init__(self) -> None:
        if len(self.layer_widths) < 1:
            raise ConfigError("MlpSpec needs at least 1 layer")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError("all layer widths must be >= 1")
        if len(self.activations) != len(self.layer_widths):
            raise ConfigError("need exactly one activation per layer")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {name!r}")
        if not (self.noise_std >= 0.0):
            raise ConfigError("noise_std must be nonnegative")


@dataclass(frozen=True)
class GeneratorConfig:
    """Sampling ranges for :func:`sample_mlp_spec`."""

    layer_range: tuple[int, int] = (1, 4)
    width_range: tuple[int, int] = (8, 64)
    noise_range: tuple[float, float] = (1e-3, 0.3)  # log-uniform
    activations: tuple[str, ...] = ACTIVATIONS

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("layer_range", self.layer_range),
            ("width_range", self.width_range),
            ("noise_range", self.noise_range),
        ):
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if self.layer_range[0] < 1 or self.width_range[0] < 1:
            raise ConfigError("layer and width minima must be >= 1")
        if self.noise_range[0] <= 0:
            raise ConfigError("noise_range minimum must be > 0 (log-uniform)")
        if not self.activations:
            raise ConfigError("empty activation set")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {name!r}")


def sample_mlp_spec(rng: RngStream, cfg: GeneratorConfig = GeneratorConfig()) -> MlpSpec:
    """Draw an MlpSpec with fields inside the configured ranges."""
    g = rng.generator()
    n_layers = int(g.integers(cfg.layer_range[0], cfg.layer_range[1] + 1))
    widths = tuple(
        int(g.integers(cfg.width_range[0], cfg.width_range[1] + 1))
        for _ in range(n_layers)
    )
    acts = tuple(str(g.choice(cfg.activations)) for _ in range(n_layers))
    lo, hi = np.log(cfg.noise_range[0]), np.log(cfg.noise_range[1])
    noise = float(np.exp(g.uniform(lo, hi)))
    seed = int(g.integers(0, 2**63))
    return MlpSpec(widths, acts, seed, noise)


def mlp_weights(spec: MlpSpec, input_dim: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Materialize per-layer (W, b), a pure function of (spec, input_dim)."""
    weights = []
    fan_in = input_dim
    for i, width in enumerate(spec.layer_widths):
        g = RngStream(spec.weight_seed).derive("layer", i, fan_in, width).generator()
        w = g.normal(0.0, _WEIGHT_GAIN / np.sqrt(fan_in), size=(fan_in, width))
        b = g.normal(0.0, _BIAS_STD, size=width)
        weights.append((w, b))
        fan_in = width
    return weights


def _mlp_forward(spec: MlpSpec, inputs: np.ndarray, g: np.random.Generator) -> np.ndarray:
    """Push rows through the MLP with additive noise after each layer."""
    h = inputs
    for (w, b), act in zip(mlp_weights(spec, inputs.shape[1]), spec.activations):
        h = _act(act, h @ w + b)
        if spec.noise_std > 0.0:
            h = h + spec.noise_std * g.standard_normal(h.shape)
    return h


def standardize_columns(x: np.ndarray, rescue: np.random.Generator | None = None) -> np.ndarray:
    """Standardize to zero mean, unit variance per column (population moments).

    A (near-)constant column carries no information, so when ``rescue`` is
    given it is replaced by a fresh standard normal draw before
    standardizing; this keeps the unit-variance contract unconditional.
    With fewer than 2 rows the input is returned centered only.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return x - np.mean(x, axis=0)
    mean = np.mean(x, axis=0)
    std = np.std(x, axis=0)
    if rescue is not None:
        dead = std < 1e-12
        if np.any(dead):
            x = x.copy()
            x[:, dead] = rescue.standard_normal((n, int(np.sum(dead))))
            mean = np.mean(x, axis=0)
            std = np.std(x, axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (x - mean) / std


def gen_unconditional(spec: MlpSpec, n: int, d_out: int, rng: RngStream) -> np.ndarray:
    """Generate an n x d_out table from standard Gaussian latents.

    The latent input width equals the first layer width.  Output columns
    are the first d_out final-layer neurons, standardized per column.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if d_out > spec.layer_widths[-1]:
        raise ConfigError(
            f"d_out={d_out} exceeds final layer width {spec.layer_widths[-1]}"
        )
    g = rng.generator()
    z = g.standard_normal((n, spec.layer_widths[0]))
    out = _mlp_forward(spec, z, g)[:, :d_out]
    return standardize_columns(out, rescue=rng.derive("rescue").generator())


def gen_conditional(spec: MlpSpec, x: np.ndarray, d_out: int, rng: RngStream) -> np.ndarray:
    """Generate n x d_out conditional values for covariate rows x.

    Each row is the MLP applied to x_i concatenated with a per-row noise
    block drawn as noise_std * N(0, I); at noise_std = 0 the conditional
    law is a deterministic function of x_i.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"x must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("x contains non-finite values")
    if d_out > spec.layer_widths[-1]:
        raise ConfigError(
            f"d_out={d_out} exceeds final layer width {spec.layer_widths[-1]}"
        )
    g = rng.generator()
    noise = spec.noise_std * g.standard_normal((x.shape[0], COND_NOISE_DIM))
    inputs = np.concatenate([x, noise], axis=1)
    return _mlp_forward(spec, inputs, g)[:, :d_out]
