"""Synthetic right-censored task generator.

A task is drawn in three stages: (1) a task recipe (:class:`DgpSpec`)
fixing the event-time family, censoring mechanism, dimensionality, and
the frozen random MLPs behind both; (2) a censoring scale calibrated by
bisection so the realized censoring fraction hits the recipe's target;
(3) the rows themselves: covariates from an unconditional MLP table,
latent event times from the family map, latent censoring times from the
mechanism, observed ``(t, delta) = (min(E, C), 1{E <= C})``.

Event and censoring values are produced from disjoint derived RNG
streams, so redrawing or editing one side never perturbs the other.
Latent times are retained on the sample for diagnostics and for
verifying the observed pairs against them.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset
from .errors import ConfigError, DataError
from .rng import RngStream
from .tabular import GeneratorConfig, MlpSpec, gen_conditional, gen_unconditional, sample_mlp_spec

FAMILIES = ("naive", "survival_distribution", "mixture")
META_FAMILY = "kitchen_sink"
CENSORING_MECHANISMS = ("uniform", "random", "administrative", "conditional_independent")
MIXTURE_FAMILIES = ("weibull", "lognormal")

SCALE_LO = 2.0**-20
SCALE_HI = 2.0**20


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PriorConfig:
    """Distribution over task recipes.

    ``family_weights`` orders (naive, survival_distribution, mixture,
    kitchen_sink); drawing the meta family re-draws one of the three
    concrete families under ``kitchen_sink_weights``.
    """

    family_weights: tuple = (0.0, 0.0, 0.0, 1.0)
    kitchen_sink_weights: tuple = (0.4, 0.4, 0.2)
    censoring_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    d_range: tuple = (1, 20)
    t_max_range: tuple = (1.0, 100.0)
    rate_range: tuple = (0.02, 0.98)
    knot_range: tuple = (4, 16)
    mixture_components: tuple = (2, 3, 5)
    covariate_gen: GeneratorConfig = GeneratorConfig()
    hidden_gen: GeneratorConfig = GeneratorConfig(noise_range=(0.05, 1.0))
    calibration_probe: int = 1024

    def __post_init__(self) -> None:
        for name, w, k in (
            ("family_weights", self.family_weights, 4),
            ("kitchen_sink_weights", self.kitchen_sink_weights, 3),
            ("censoring_weights", self.censoring_weights, 4),
        ):
            if len(w) != k or any(v < 0 for v in w) or sum(w) <= 0:
                raise ConfigError(f"{name} must be {k} nonnegative weights with positive sum")
        if not 1 <= self.d_range[0] <= self.d_range[1]:
            raise ConfigError(f"bad d_range {self.d_range}")
        if not 0.0 < self.t_max_range[0] <= self.t_max_range[1]:
            raise ConfigError(f"bad t_max_range {self.t_max_range}")
        lo, hi = self.rate_range
        if not 0.0 < lo <= hi < 1.0:
            raise ConfigError(f"bad rate_range {self.rate_range}")
        if not 1 <= self.knot_range[0] <= self.knot_range[1]:
            raise ConfigError(f"bad knot_range {self.knot_range}")
        if not self.mixture_components or any(int(k) < 1 for k in self.mixture_components):
            raise ConfigError(f"bad mixture_components {self.mixture_components}")
        if self.calibration_probe < 16:
            raise ConfigError("calibration_probe must be >= 16")


@dataclass(frozen=True)
class DgpSpec:
    """Fully resolved task recipe; immutable and serializable."""

    family: str
    requested_family: str
    d: int
    t_max: float
    target_rate: float
    censoring: str
    covariate_spec: MlpSpec
    event_spec: MlpSpec
    censor_spec: MlpSpec | None = None
    knot_count: int | None = None
    mixture_family: str | None = None
    mixture_k: int | None = None
    calibration_probe: int = 1024

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.censoring not in CENSORING_MECHANISMS:
            raise ConfigError(f"unknown censoring mechanism {self.censoring!r}")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if not 0.0 < self.target_rate < 1.0:
            raise ConfigError("target_rate must be in (0,1)")
        if self.family == "survival_distribution" and (self.knot_count is None or self.knot_count < 1):
            raise ConfigError("survival_distribution requires knot_count >= 1")
        if self.family == "mixture":
            if self.mixture_family not in MIXTURE_FAMILIES:
                raise ConfigError(f"unknown mixture family {self.mixture_family!r}")
            if self.mixture_k is None or self.mixture_k < 1:
                raise ConfigError("mixture requires mixture_k >= 1")
        if self.censoring in ("random", "conditional_independent") and self.censor_spec is None:
            raise ConfigError(f"censoring {self.censoring!r} requires censor_spec")

    @property
    def event_width(self) -> int:
        """Output width the event MLP must provide."""
        if self.family == "naive":
            return 1
        if self.family == "survival_distribution":
            return int(self.knot_count)
        return 3 * int(self.mixture_k)


def _widen_last(spec: MlpSpec, floor: int) -> MlpSpec:
    if spec.layer_widths[-1] >= floor:
        return spec
    widths = (*spec.layer_widths[:-1], floor)
    return dataclasses.replace(spec, layer_widths=widths)


def sample_dgp(rng: RngStream, cfg: PriorConfig | None = None) -> DgpSpec:
    """Draw one task recipe from the prior."""
    cfg = cfg or PriorConfig()
    g = rng.generator()
    fam_w = np.asarray(cfg.family_weights, float)
    fam_w = fam_w / fam_w.sum()
    choices = FAMILIES + (META_FAMILY,)
    requested = choices[int(g.choice(4, p=fam_w))]
    if requested == META_FAMILY:
        kid_w = np.asarray(cfg.kitchen_sink_weights, float)
        family = FAMILIES[int(g.choice(3, p=kid_w / kid_w.sum()))]
    else:
        family = requested
    d = int(g.integers(cfg.d_range[0], cfg.d_range[1] + 1))
    lo, hi = cfg.t_max_range
    t_max = float(np.exp(g.uniform(math.log(lo), math.log(hi))))
    target_rate = float(g.uniform(*cfg.rate_range))
    cen_w = np.asarray(cfg.censoring_weights, float)
    censoring = CENSORING_MECHANISMS[int(g.choice(4, p=cen_w / cen_w.sum()))]
    knot_count = mixture_family = mixture_k = None
    if family == "survival_distribution":
        knot_count = int(g.integers(cfg.knot_range[0], cfg.knot_range[1] + 1))
    elif family == "mixture":
        mixture_k = int(cfg.mixture_components[int(g.integers(len(cfg.mixture_components)))])
        mixture_family = MIXTURE_FAMILIES[int(g.integers(2))]
    cov_spec = _widen_last(sample_mlp_spec(rng.derive("covariates"), cfg.covariate_gen), d)
    event_spec = sample_mlp_spec(rng.derive("event"), cfg.hidden_gen)
    censor_spec = None
    if censoring in ("random", "conditional_independent"):
        censor_spec = sample_mlp_spec(rng.derive("censor"), cfg.hidden_gen)
    spec = DgpSpec(
        family=family,
        requested_family=requested,
        d=d,
        t_max=t_max,
        target_rate=target_rate,
        censoring=censoring,
        covariate_spec=cov_spec,
        event_spec=_widen_last(event_spec, _event_width(family, knot_count, mixture_k)),
        censor_spec=censor_spec,
        knot_count=knot_count,
        mixture_family=mixture_family,
        mixture_k=mixture_k,
        calibration_probe=cfg.calibration_probe,
    )
    return spec


def _event_width(family: str, knot_count, mixture_k) -> int:
    if family == "naive":
        return 1
    if family == "survival_distribution":
        return int(knot_count)
    return 3 * int(mixture_k)


# ---------------------------------------------------------------------------
# monotone CDF map for the survival_distribution family


@dataclass(eq=False)
class BernsteinMap:
    """Monotone [0,1] -> [0,1] map from unconstrained coefficients.

    Softmax of the coefficients gives increments; their cumulative sum
    (prefixed with 0, final point pinned to exactly 1) forms the control
    points of a Bernstein polynomial, which is then strictly a CDF on
    [0,1] with f(0)=0 and f(1)=1 exact.
    """

    coefficients: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim != 1 or c.size < 1 or not np.all(np.isfinite(c)):
            raise DataError("coefficients must be a finite 1-D array")
        self.coefficients = c
        self.increments = _softmax_rows(c[None, :])[0]
        b = np.concatenate([[0.0], np.cumsum(self.increments)])
        b[-1] = 1.0
        self.control_points = b

    @property
    def knot_count(self) -> int:
        return self.coefficients.size

    def __call__(self, u):
        return bernstein_eval(self, u)


def _bernstein_rows(control: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Rows of control points (m, K+1) evaluated at per-row u (m,)."""
    m, kp1 = control.shape
    k = kp1 - 1
    j = np.arange(kp1)
    from scipy.special import comb

    binom = comb(k, j)
    u = u[:, None]
    basis = binom * np.power(u, j) * np.power(1.0 - u, k - j)
    return np.sum(control * basis, axis=1)


def bernstein_eval(bmap: BernsteinMap, u):
    """Evaluate the map; endpoints are exact (f(0)=0, f(1)=1)."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1):
        raise DataError("bernstein argument must lie in [0,1]")
    flat = np.atleast_1d(arr).ravel()
    vals = _bernstein_rows(np.broadcast_to(bmap.control_points, (flat.size, bmap.knot_count + 1)), flat)
    if np.isscalar(u) or arr.ndim == 0:
        return float(vals[0])
    return vals.reshape(arr.shape)


def sample_survdist_time(bmap: BernsteinMap, t_max: float, rng: RngStream) -> float:
    """One event time t_max * f(U), U uniform."""
    g = rng.generator()
    return float(t_max * bernstein_eval(bmap, float(g.uniform())))


# ---------------------------------------------------------------------------
# parametric mixture family


def weibull_time(u, shape, scale):
    """Inverse-CDF draw: scale * (-log(1-u))^(1/shape)."""
    u = np.asarray(u, dtype=np.float64)
    return scale * np.power(-np.log1p(-u), 1.0 / shape)


def lognormal_time(eps, mu, sigma):
    return np.exp(mu + sigma * np.asarray(eps, dtype=np.float64))


def mixture_row_params(family: str, raw: np.ndarray) -> dict:
    """Map raw MLP outputs (m, 3k) to per-row mixture parameters.

    Weibull shape/scale get softplus plus a 0.1 floor; lognormal mu and
    sigma are softplus only (strictly positive, no floor).  Component
    weights are the softmax of the last block.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if raw.shape[1] % 3:
        raise DataError("mixture parameter block must have width 3k")
    k = raw.shape[1] // 3
    a, b, r = raw[:, :k], raw[:, k : 2 * k], raw[:, 2 * k :]
    if family == "weibull":
        p1, p2 = softplus(a) + 0.1, softplus(b) + 0.1
    elif family == "lognormal":
        p1, p2 = softplus(a), softplus(b)
    else:
        raise ConfigError(f"unknown mixture family {family!r}")
    return {"p1": p1, "p2": p2, "weights": _softmax_rows(r)}


def sample_mixture_time(family: str, p1, p2, weights, rng: RngStream) -> float:
    """One event time from a k-component mixture row."""
    g = rng.generator()
    w = np.asarray(weights, dtype=np.float64)
    z = int(np.minimum((g.uniform() > np.cumsum(w)).sum(), w.size - 1))
    if family == "weibull":
        return float(weibull_time(g.uniform(), float(np.asarray(p1)[z]), float(np.asarray(p2)[z])))
    return float(lognormal_time(g.standard_normal(), float(np.asarray(p1)[z]), float(np.asarray(p2)[z])))


# ---------------------------------------------------------------------------
# latent generation


def _event_latents(spec: DgpSpec, x: np.ndarray, rng: RngStream) -> np.ndarray:
    """Latent event times for rows of x; nonnegative for every family."""
    n = x.shape[0]
    raw = gen_conditional(spec.event_spec, x, spec.event_width, rng.derive("mlp"))
    g = rng.generator()
    if spec.family == "naive":
        e = raw[:, 0].copy()
        m = float(e.min()) if n else 0.0
        if m < 0:  # pooled shift so the task's raw times are nonnegative
            e -= m
        return e
    if spec.family == "survival_distribution":
        inc = _softmax_rows(raw)
        control = np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)
        control[:, -1] = 1.0
        u = g.uniform(size=n)
        return spec.t_max * _bernstein_rows(control, u)
    params = mixture_row_params(spec.mixture_family, raw)
    cum = np.cumsum(params["weights"], axis=1)
    z = np.minimum((g.uniform(size=n)[:, None] > cum).sum(axis=1), spec.mixture_k - 1)
    rows = np.arange(n)
    p1 = params["p1"][rows, z]
    p2 = params["p2"][rows, z]
    if spec.mixture_family == "weibull":
        return weibull_time(g.uniform(size=n), p1, p2)
    return lognormal_time(g.standard_normal(size=n), p1, p2)


def apply_censoring(spec: DgpSpec, x: np.ndarray, event_times: np.ndarray, rng: RngStream) -> np.ndarray:
    """Latent censoring times (nonnegative) for one task's rows."""
    e = np.asarray(event_times, dtype=np.float64)
    if np.any(~np.isfinite(e)) or np.any(e < 0):
        raise DataError("event times must be finite and nonnegative")
    n = x.shape[0]
    g = rng.generator()
    if spec.censoring == "uniform":
        lo, hi = float(e.min()), float(e.max())
        return g.uniform(lo, hi, size=n)  # degenerate range yields the constant
    if spec.censoring == "administrative":
        a_star = spec.t_max
        if not a_star > 0:
            raise DataError("administrative censoring needs a positive horizon")
        return a_star - g.uniform(0.0, a_star, size=n)
    if spec.censoring == "random":
        raw = gen_unconditional(spec.censor_spec, n, 1, rng.derive("mlp"))[:, 0]
    else:  # conditional_independent
        raw = gen_conditional(spec.censor_spec, x, 1, rng.derive("mlp"))[:, 0]
    m = float(raw.min()) if n else 0.0
    if m < 0:
        raw = raw - m
    return raw


def _raw_latents(spec: DgpSpec, n: int, rng: RngStream):
    """(x, event, censor) latents with disjoint event/censor streams."""
    x = gen_unconditional(spec.covariate_spec, n, spec.d, rng.derive("covariates"))
    e = _event_latents(spec, x, rng.derive("event"))
    c = apply_censoring(spec, x, e, rng.derive("censor"))
    return x, e, c


# ---------------------------------------------------------------------------
# censoring-rate calibration


@dataclass(frozen=True)
class CalibrationResult:
    scale: float
    achieved_rate: float
    residual: float
    converged: bool
    clamped: bool
    monotone: bool = True


def calibrate_scale(event_times, censor_times, target: float, tol: float = 0.02) -> CalibrationResult:
    """Bisect a multiplicative censor scale so mean(s*C < E) ~= target.

    The rate is nonincreasing in s; bisection runs in log space over
    [2^-20, 2^20] and returns the best scale seen.  ``clamped`` flags a
    target outside the attainable range at the boundary scales.  A probe
    whose rate curve comes back non-monotone is reported via a warning
    and yields scale 1.
    """
    e = np.asarray(event_times, dtype=np.float64)
    c = np.asarray(censor_times, dtype=np.float64)
    if e.shape != c.shape or e.ndim != 1 or e.size == 0:
        raise DataError("calibration needs matching 1-D event/censor arrays")
    if not 0.0 < target < 1.0:
        raise ConfigError("target censoring rate must be in (0,1)")

    def rate(s: float) -> float:
        return float(np.mean(s * c < e))

    lo, hi = SCALE_LO, SCALE_HI
    r_lo, r_hi = rate(lo), rate(hi)
    if r_lo < r_hi:
        warnings.warn("censoring rate curve is not monotone on this probe; keeping scale 1")
        r_one = rate(1.0)
        return CalibrationResult(1.0, r_one, abs(r_one - target), False, False, monotone=False)
    if target > r_lo:
        return CalibrationResult(lo, r_lo, abs(r_lo - target), abs(r_lo - target) <= tol, True)
    if target < r_hi:
        return CalibrationResult(hi, r_hi, abs(r_hi - target), abs(r_hi - target) <= tol, True)
    best_s, best_r = 1.0, rate(1.0)
    for _ in range(64):
        mid = math.sqrt(lo * hi)
        r_mid = rate(mid)
        if abs(r_mid - target) < abs(best_r - target):
            best_s, best_r = mid, r_mid
        if r_mid >= target:
            lo = mid
        else:
            hi = mid
    residual = abs(best_r - target)
    return CalibrationResult(best_s, best_r, residual, residual <= tol, False)


def calibrate_censoring_rate(spec: DgpSpec, target: float, rng: RngStream, n_probe: int | None = None) -> CalibrationResult:
    """Calibrate the censor scale on a fresh probe drawn from the recipe."""
    n = int(n_probe if n_probe is not None else spec.calibration_probe)
    _, e, c = _raw_latents(spec, n, rng.derive("probe"))
    return calibrate_scale(e, c, target)


# ---------------------------------------------------------------------------
# task assembly


@dataclass(eq=False)
class TaskSample:
    """One drawn task: observed context plus query rows with latents kept."""

    context: SurvivalDataset
    x_query: np.ndarray
    query_event_times: np.ndarray
    query_censor_times: np.ndarray
    latent_event_times: np.ndarray
    latent_censor_times: np.ndarray
    censor_scale: float
    spec: DgpSpec | None = None

    @property
    def n_ctx(self) -> int:
        return self.context.n

    @property
    def n_query(self) -> int:
        return self.x_query.shape[0]

    @property
    def d(self) -> int:
        return self.x_query.shape[1]


def sample_task(spec: DgpSpec, n_ctx: int, n_query: int, rng: RngStream) -> TaskSample:
    """Draw one task: calibrate censoring, sample rows, split context/query."""
    if n_ctx < 1 or n_query < 1:
        raise ConfigError("need n_ctx >= 1 and n_query >= 1")
    cal = calibrate_censoring_rate(spec, spec.target_rate, rng.derive("calibration"))
    x, e, c_raw = _raw_latents(spec, n_ctx + n_query, rng.derive("rows"))
    c = cal.scale * c_raw
    t = np.minimum(e, c)
    delta = (e <= c).astype(np.int64)
    # observed pairs must reproduce from the retained latents
    if not (np.array_equal(t, np.minimum(e, c)) and np.array_equal(delta, (e <= c).astype(np.int64))):
        raise DataError("observed (t, delta) inconsistent with latents")
    context = SurvivalDataset(x[:n_ctx], t[:n_ctx], delta[:n_ctx])
    return TaskSample(
        context=context,
        x_query=x[n_ctx:],
        query_event_times=e[n_ctx:],
        query_censor_times=c[n_ctx:],
        latent_event_times=e[:n_ctx],
        latent_censor_times=c[:n_ctx],
        censor_scale=cal.scale,
        spec=spec,
    )


@dataclass(frozen=True)
class SyntheticPrior:
    """Trainer-facing sampler: fresh recipe, then rows, per call."""

    cfg: PriorConfig = PriorConfig()

    def sample_task(self, rng: RngStream, n_ctx: int, n_query: int) -> TaskSample:
        spec = sample_dgp(rng.derive("dgp"), self.cfg)
        return sample_task(spec, n_ctx, n_query, rng.derive("rows"))


@dataclass(frozen=True)
class SimpleExponentialPrior:
    """Closed-form sanity prior: one covariate, exponential hazards.

    X ~ N(0,1), hazard exp(coef*x), E drawn by inverse CDF, and
    C ~ Unif(0, censor_max).  True survival S(t|x) = exp(-t*exp(coef*x))
    is available for oracle comparisons.
    """

    coef: float = 1.0
    censor_max: float = 3.0

    def hazard(self, x):
        return np.exp(self.coef * np.asarray(x, dtype=np.float64))

    def true_survival(self, x, grid) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
        grid = np.asarray(grid, dtype=np.float64)
        return np.exp(-grid[None, :] * self.hazard(x)[:, None])

    def sample_task(self, rng: RngStream, n_ctx: int, n_query: int) -> TaskSample:
        if n_ctx < 1 or n_query < 1:
            raise ConfigError("need n_ctx >= 1 and n_query >= 1")
        n = n_ctx + n_query
        x = rng.derive("covariates").generator().standard_normal((n, 1))
        u = rng.derive("event").generator().uniform(size=n)
        e = -np.log1p(-u) / self.hazard(x[:, 0])
        c = rng.derive("censor").generator().uniform(0.0, self.censor_max, size=n)
        t = np.minimum(e, c)
        delta = (e <= c).astype(np.int64)
        return TaskSample(
            context=SurvivalDataset(x[:n_ctx], t[:n_ctx], delta[:n_ctx]),
            x_query=x[n_ctx:],
            query_event_times=e[n_ctx:],
            query_censor_times=c[n_ctx:],
            latent_event_times=e[:n_ctx],
            latent_censor_times=c[:n_ctx],
            censor_scale=1.0,
            spec=None,
        )
