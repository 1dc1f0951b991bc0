"""Context-fitted monotone time transforms and the shared bin discretizer.

Raw survival times are mapped into a bounded model space by a monotone
transform fitted on context times only, then discretized into L bins.
Two transform kinds exist:

* ``lognormal2normal``: moment-matched lognormal whose raw-time mean and
  standard deviation equal the sample's (population moments), mapping
  t -> (log t - mu) / sigma.  Model space is [-5, 5].
* ``time2quantile``: piecewise-linear empirical CDF through knots at 0
  and the sorted unique positive observed times.  Model space is [0, 1].

Both serialize as tagged records so checkpoints and task files can carry
them.  Bin indices are 1-based (1..L) with boundary clamping, matching
the tail-sum survival convention used downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DataError

MODEL_RANGE_LOGNORMAL = (-5.0, 5.0)
MODEL_RANGE_QUANTILE = (0.0, 1.0)


@dataclass(frozen=True)
class LognormalTransform:
    """g(t) = (log t - mu) / sigma with the moment-matched (mu, sigma)."""

    mu: float
    sigma: float
    kind: str = "lognormal2normal"

    def forward(self, t):
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore"):
            out = (np.log(t) - self.mu) / self.sigma
        return out if out.ndim else float(out)

    def inverse(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = np.exp(self.mu + self.sigma * z)
        return out if out.ndim else float(out)

    @property
    def model_range(self) -> tuple[float, float]:
        return MODEL_RANGE_LOGNORMAL

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class QuantileTransform:
    """Piecewise-linear empirical CDF; knots[0] = 0, cdf spans [0, 1]."""

    knots: np.ndarray
    cdf: np.ndarray
    kind: str = "time2quantile"

    def forward(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.interp(t, self.knots, self.cdf)
        return out if out.ndim else float(out)

    def inverse(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = np.interp(z, self.cdf, self.knots)
        return out if out.ndim else float(out)

    @property
    def model_range(self) -> tuple[float, float]:
        return MODEL_RANGE_QUANTILE

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "knots": [float(v) for v in self.knots],
            "cdf": [float(v) for v in self.cdf],
        }


TimeTransform = Union[LognormalTransform, QuantileTransform]

TRANSFORM_KINDS = ("lognormal2normal", "time2quantile")


def transform_from_dict(record: dict) -> TimeTransform:
    kind = record.get("kind")
    if kind == "lognormal2normal":
        return LognormalTransform(float(record["mu"]), float(record["sigma"]))
    if kind == "time2quantile":
        return QuantileTransform(
            np.asarray(record["knots"], dtype=np.float64),
            np.asarray(record["cdf"], dtype=np.float64),
        )
    raise DataError(f"unknown transform kind {kind!r}")


def lognormal_from_moments(mean: float, std: float) -> LognormalTransform:
    """Lognormal params matching a raw-time mean and standard deviation."""
    if not mean > 0:
        raise DataError(f"mean must be positive, got {mean}")
    sigma2 = math.log(1.0 + (std / mean) ** 2)
    sigma = max(math.sqrt(sigma2), 1e-6)
    mu = math.log(mean) - sigma2 / 2.0
    return LognormalTransform(mu, sigma)


def fit_lognormal2normal(times) -> LognormalTransform:
    """Moment-matched lognormal transform (population mean/std of times)."""
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2:
        raise DataError("need at least 2 times to fit lognormal2normal")
    if not np.all(np.isfinite(times)) or np.any(times < 0):
        raise DataError("times must be finite and nonnegative")
    mean = float(np.mean(times))
    std = float(np.std(times))
    if not mean > 0:
        raise DataError(f"mean of times must be positive, got {mean}")
    return lognormal_from_moments(mean, std)


def fit_time2quantile(times) -> QuantileTransform:
    """Empirical-CDF transform with knots at 0 and unique positive times.

    cdf[j] = (#times <= knot_j) / N with cdf[0] pinned to 0 at knot 0;
    any exact zeros in the sample count toward N but add no knot, so the
    CDF ramps linearly over (0, first positive time].
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size < 1:
        raise DataError("need at least 1 time to fit time2quantile")
    if not np.all(np.isfinite(times)) or np.any(times < 0):
        raise DataError("times must be finite and nonnegative")
    positive = np.unique(times[times > 0])
    if positive.size == 0:
        raise DataError("need at least 1 positive time to fit time2quantile")
    n = times.size
    counts = np.searchsorted(np.sort(times), positive, side="right")
    knots = np.concatenate([[0.0], positive])
    cdf = np.concatenate([[0.0], counts / n])
    return QuantileTransform(knots, cdf)


def fit_transform(kind: str, times) -> TimeTransform:
    if kind == "lognormal2normal":
        return fit_lognormal2normal(times)
    if kind == "time2quantile":
        return fit_time2quantile(times)
    raise DataError(f"unknown transform kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Binner:
    """L bins over model space delimited by L+1 strictly increasing edges."""

    edges: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1


def make_binner(transform: TimeTransform, n_bins: int = 1024) -> Binner:
    """Uniform partition of the transform's model range into n_bins bins."""
    if n_bins < 2:
        raise DataError(f"need at least 2 bins, got {n_bins}")
    lo, hi = transform.model_range
    return Binner(np.linspace(lo, hi, n_bins + 1))


def bin_index(binner: Binner, transform: TimeTransform, t):
    """1-based bin index of g(t), clamped into 1..L at the boundaries.

    Bins are left-open, right-closed: bin k covers (z_{k-1}, z_k].
    """
    z = np.asarray(transform.forward(t))
    idx = np.searchsorted(binner.edges, z, side="left")
    idx = np.clip(idx, 1, binner.n_bins)
    return idx if idx.ndim else int(idx)


def bin_upper_times(binner: Binner, transform: TimeTransform) -> np.ndarray:
    """Raw-time right edges g^{-1}(z_1..z_L) of the L bins."""
    return np.asarray(transform.inverse(binner.edges[1:]), dtype=np.float64)
