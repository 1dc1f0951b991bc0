"""Right-censored evaluation metrics and Kaplan-Meier machinery.

Conventions, fixed here and mirrored by the brute-force test oracles:

* Curves are right-continuous steps; before the first grid time S = 1.
* Concordance counts strictly concordant pairs over comparable pairs
  (an event i with t_i < t_j); risk ties earn no credit.  No comparable
  pairs -> None.
* The IPCW Brier score weights past events by 1/S_C(t_i) and at-risk
  subjects by 1/S_C(u), with S_C floored at 0.05; the integral runs on
  {0} + grid nodes below the horizon + the horizon itself, trapezoidal,
  divided by the horizon.
* D-calibration uses 10 equal-width bins; censored mass is spread over
  [0, S(t_i)] proportionally to overlap, with S(t_i)=0 collapsing to
  the lowest bin.
* MAE-PO keeps observed times for events; censored subjects get
  jackknife pseudo-values of the KM restricted mean (restriction at the
  max observed time, held fixed across leave-one-out refits) weighted
  by 1 - S_KM(t_i).  All weights zero -> None.
* The log-rank statistic is the standard two-group chi-square; zero
  pooled events or zero variance -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

IPCW_FLOOR = 0.05
DCAL_BINS = 10


def _check_times_events(times, events):
    t = np.asarray(times, dtype=np.float64)
    d = np.asarray(events)
    if t.ndim != 1 or t.size == 0 or t.shape != d.shape:
        raise DataError("need matching nonempty 1-D times and events")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DataError("times must be finite and nonnegative")
    if not np.all(np.isin(d, (0, 1))):
        raise DataError("events must be 0/1")
    return t, d.astype(np.int64)


# ---------------------------------------------------------------------------
# curves


@dataclass(eq=False)
class SurvivalCurve:
    """Right-continuous step curve; S(t) = 1 before the first grid time."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if g.ndim != 1 or g.size == 0 or g.shape != v.shape:
            raise DataError("curve needs matching nonempty grid and values")
        if np.any(g < 0) or np.any(np.diff(g) <= 0):
            raise DataError("grid must be nonnegative and strictly increasing")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12) or np.any(np.diff(v) > 1e-12):
            raise DataError("values must lie in [0,1] and be nonincreasing")
        self.grid = g
        self.values = np.clip(v, 0.0, 1.0)

    def __call__(self, t):
        return step_eval(self.grid, self.values, t)


def step_eval(grid: np.ndarray, values: np.ndarray, t):
    """Right-continuous step lookup with S=1 left of the grid."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    idx = np.searchsorted(grid, t_arr, side="right") - 1
    out = np.where(idx >= 0, values[np.maximum(idx, 0)], 1.0)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return float(out[0])
    return out


def curves_from_matrix(grid, matrix) -> list:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    return [SurvivalCurve(grid, row) for row in m]


def median_survival_time(curve: SurvivalCurve) -> float:
    """First grid time with S <= 1/2; the last grid time if never reached."""
    below = np.flatnonzero(curve.values <= 0.5)
    if below.size:
        return float(curve.grid[below[0]])
    return float(curve.grid[-1])


# ---------------------------------------------------------------------------
# Kaplan-Meier


@dataclass(eq=False)
class KmEstimate:
    """Product-limit estimate over the distinct observed times."""

    times: np.ndarray      # distinct observed times, increasing
    at_risk: np.ndarray    # n_j just before each time
    n_events: np.ndarray   # d_j events exactly at each time
    survival: np.ndarray   # S after each time

    def __call__(self, t):
        return step_eval(self.times, self.survival, t)


def km_estimate(times, events) -> KmEstimate:
    """Kaplan-Meier fit; pass 1-events to estimate the censoring curve."""
    t, d = _check_times_events(times, events)
    order = np.argsort(t, kind="stable")
    t, d = t[order], d[order]
    distinct, start = np.unique(t, return_index=True)
    n = t.size
    at_risk = n - start
    d_j = np.add.reduceat(d, start)
    factors = 1.0 - d_j / at_risk
    survival = np.cumprod(factors)
    return KmEstimate(distinct, at_risk.astype(np.int64), d_j.astype(np.int64), survival)


def km_restricted_mean(km: KmEstimate, tau: float) -> float:
    """Area under the KM step curve on [0, tau]."""
    if tau <= 0:
        return 0.0
    knots = np.concatenate([[0.0], km.times[km.times < tau], [tau]])
    heights = np.concatenate([[1.0], km.survival[km.times < tau]])
    return float(np.sum(heights * np.diff(knots)))


# ---------------------------------------------------------------------------
# concordance


def concordance_index(risk, times, events):
    """Harrell's CI with strict inequalities; None when no pair is comparable."""
    t, d = _check_times_events(times, events)
    r = np.asarray(risk, dtype=np.float64)
    if r.shape != t.shape:
        raise DataError("risk scores must match times")
    comparable = (d[:, None] == 1) & (t[:, None] < t[None, :])
    n_comp = int(comparable.sum())
    if n_comp == 0:
        return None
    concordant = comparable & (r[:, None] > r[None, :])
    return float(concordant.sum() / n_comp)


# ---------------------------------------------------------------------------
# integrated Brier score


@dataclass(frozen=True)
class IbsResult:
    value: float
    floored: bool  # True when the censoring curve hit the IPCW floor

    def __float__(self) -> float:
        return self.value


def brier_score(curves, times, events, censor_km: KmEstimate, u: float) -> tuple:
    """IPCW Brier score at one time; returns (value, floored)."""
    t, d = _check_times_events(times, events)
    if len(curves) != t.size:
        raise DataError("need one predicted curve per subject")
    s_u = np.array([c(u) for c in curves])
    sc_t = np.asarray(censor_km(t))
    sc_u = float(censor_km(u))
    floored = bool(np.any(sc_t < IPCW_FLOOR) or sc_u < IPCW_FLOOR)
    sc_t = np.maximum(sc_t, IPCW_FLOOR)
    sc_u = max(sc_u, IPCW_FLOOR)
    past = (d == 1) & (t <= u)
    at_risk = t > u
    terms = np.where(past, s_u**2 / sc_t, 0.0) + np.where(at_risk, (1.0 - s_u) ** 2 / sc_u, 0.0)
    return float(terms.mean()), floored


def integrated_brier(curves, times, events, censor_km: KmEstimate, tau: float, grid) -> IbsResult:
    """Trapezoidal IBS over {0, grid nodes < tau, tau}, divided by tau."""
    if not tau > 0:
        raise DataError("horizon must be positive")
    g = np.asarray(grid, dtype=np.float64)
    inner = np.unique(g[(g > 0) & (g < tau)])
    nodes = np.concatenate([[0.0], inner, [tau]])
    vals = np.empty(nodes.size)
    floored = False
    for k, u in enumerate(nodes):
        vals[k], fl = brier_score(curves, times, events, censor_km, float(u))
        floored = floored or fl
    return IbsResult(float(np.trapezoid(vals, nodes) / tau), floored)


# ---------------------------------------------------------------------------
# D-calibration


def d_calibration(surv_at_event, events, n_bins: int = DCAL_BINS):
    """Chi-square over equal-width probability bins with censored blurring."""
    u = np.asarray(surv_at_event, dtype=np.float64)
    d = np.asarray(events)
    if u.shape != d.shape or u.ndim != 1 or u.size == 0:
        raise DataError("need matching nonempty values and events")
    if np.any(u < 0) or np.any(u > 1):
        raise DataError("survival values must lie in [0,1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    mass = np.zeros(n_bins)
    for ui, di in zip(u, d):
        if di == 1:
            mass[min(int(ui * n_bins), n_bins - 1)] += 1.0
        elif ui <= 0.0:
            mass[0] += 1.0  # degenerate blur: no admissible range
        else:
            overlap = np.clip(np.minimum(edges[1:], ui) - edges[:-1], 0.0, None)
            mass += overlap / ui
    expected = u.size / n_bins
    return float(np.sum((mass - expected) ** 2 / expected))


# ---------------------------------------------------------------------------
# MAE on pseudo-observations


def mae_po(pred_times, times, events, km: KmEstimate | None = None):
    """Weighted MAE against observed times / jackknife pseudo-values.

    Censored subjects with zero confidence weight are skipped outright
    (their term vanishes), which also sidesteps leave-one-out refits on
    degenerate data.  Returns None when every weight is zero.
    """
    t, d = _check_times_events(times, events)
    pred = np.asarray(pred_times, dtype=np.float64)
    if pred.shape != t.shape:
        raise DataError("predicted times must match observed times")
    if not np.all(np.isfinite(pred)):
        raise DataError("predicted times must be finite")
    if km is None:
        km = km_estimate(t, d)
    tau = float(t.max())
    rm_full = km_restricted_mean(km, tau)
    n = t.size
    num = 0.0
    den = 0.0
    for i in range(n):
        if d[i] == 1:
            target, w = float(t[i]), 1.0
        else:
            w = 1.0 - float(km(t[i]))
            if w == 0.0:
                continue
            keep = np.arange(n) != i
            rm_loo = km_restricted_mean(km_estimate(t[keep], d[keep]), tau)
            target = n * rm_full - (n - 1) * rm_loo
        num += w * abs(float(pred[i]) - target)
        den += w
    if den == 0.0:
        return None
    return float(num / den)


# ---------------------------------------------------------------------------
# log-rank


def log_rank(obs_times, obs_events, pred_times) -> float:
    """Two-group log-rank chi-square; predictions count as uncensored."""
    t1, d1 = _check_times_events(obs_times, obs_events)
    t2 = np.asarray(pred_times, dtype=np.float64)
    if t2.ndim != 1 or t2.size == 0:
        raise DataError("predicted sample must be nonempty 1-D")
    if not np.all(np.isfinite(t2)) or np.any(t2 < 0):
        raise DataError("predicted times must be finite and nonnegative")
    d2 = np.ones(t2.size, dtype=np.int64)
    times = np.concatenate([t1, t2])
    events = np.concatenate([d1, d2])
    group = np.concatenate([np.zeros(t1.size, bool), np.ones(t2.size, bool)])
    event_times = np.unique(times[events == 1])
    if event_times.size == 0:
        return 0.0
    o1 = e1 = var = 0.0
    for tj in event_times:
        at_risk = times >= tj
        n_j = int(at_risk.sum())
        n_1j = int((at_risk & ~group).sum())
        dead = (times == tj) & (events == 1)
        d_j = int(dead.sum())
        d_1j = int((dead & ~group).sum())
        o1 += d_1j
        e1 += d_j * n_1j / n_j
        if n_j > 1:
            var += d_j * (n_1j / n_j) * (1 - n_1j / n_j) * (n_j - d_j) / (n_j - 1)
    if var <= 0.0:
        return 0.0
    return float((o1 - e1) ** 2 / var)
