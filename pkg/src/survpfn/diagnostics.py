"""Prior-quality diagnostics: identifiability, diversity, and curve bands.

The information-theoretic quantities use one shared quantization: rows
are grouped into covariate cells by seeded k-means on standardized
columns, and continuous values are discretized into equal-mass quantile
bins (deduplicated, so ties can only reduce the bin count).

* ``estimate_cmi`` bins event and censor values within each cell (bin
  count capped by cell size) and averages Miller-Madow-corrected
  plug-in mutual information across cells.  Near zero means censoring
  carries no extra information about the event time once covariates
  are known.
* ``conditional_entropy`` bins observed times globally (8 equal-mass
  bins over the whole sample) and averages the within-cell plug-in
  entropy over those global bins, so the value reflects how much of the
  time spread covariates explain rather than the within-cell binning.
* ``observed_dispersion`` is log10 of the coefficient of variation.
* ``curve_bands`` overlays per-task curves on a task-normalized time
  axis and reports pointwise percentile bands.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .metrics import km_estimate, step_eval

N_CELLS = 8
N_BINS = 8
MIN_ROWS = 64
BAND_PERCENTILES = (10, 25, 50, 75, 90)


def _standardize_live_columns(x: np.ndarray) -> np.ndarray | None:
    """Columns scaled to zero mean/unit sd; None when all are constant."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    live = std > 1e-12
    if not np.any(live):
        return None
    return (x[:, live] - mean[live]) / std[live]


def _covariate_cells(x: np.ndarray, seed: int) -> np.ndarray:
    """Row labels from seeded k-means; one cell when X is degenerate.

    Rows are clustered in lexicographic order so that jointly permuting
    the input rows permutes the labels identically -- the seeded "++"
    initialization samples rows, which would otherwise leak row order
    into the cell assignment.
    """
    n = x.shape[0]
    std = _standardize_live_columns(x)
    if std is None:
        return np.zeros(n, dtype=int)
    from scipy.cluster.vq import kmeans2

    order = np.lexsort(std.T)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # empty clusters are fine here
        try:
            _, labels = kmeans2(std[order], N_CELLS, minit="++", seed=seed)
        except Exception:
            return np.zeros(n, dtype=int)
    out = np.empty(n, dtype=int)
    out[order] = labels
    return out


def _quantile_bins(values: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Equal-mass bin labels; duplicate quantile edges collapse bins."""
    edges = np.unique(np.quantile(values, np.linspace(0, 1, n_bins + 1)[1:-1]))
    return np.searchsorted(edges, values, side="left")


def _cell_bin_count(n_c: int) -> int:
    """Within-cell bin count, capped so the plug-in bias stays first-order.

    Small cells cannot support an 8x8 joint table: the Miller-Madow
    correction removes only the leading 1/n bias term, so the bin count
    shrinks like sqrt(n_c) until cells reach ~128 rows, where the full
    8 bins are used.
    """
    return int(np.clip(np.sqrt(n_c / 2.0), 2, N_BINS))


def _plugin_mi_mm(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in MI of two label vectors with the Miller-Madow correction.

    The joint support size is taken as the product of the marginal bin
    counts (the support under the independence null), which makes the
    correction cancel the (Ka-1)(Kb-1)/(2n) plug-in bias of independent
    data even when many joint cells are empty.
    """
    n = a.size
    joint = {}
    for pair in zip(a.tolist(), b.tolist()):
        joint[pair] = joint.get(pair, 0) + 1
    ca, cb = {}, {}
    for (i, j), c in joint.items():
        ca[i] = ca.get(i, 0) + c
        cb[j] = cb.get(j, 0) + c
    mi = 0.0
    for (i, j), c in sorted(joint.items()):  # fixed order: row order cannot shift the sum
        p = c / n
        mi += p * np.log(p * n * n / (ca[i] * cb[j]))
    correction = (len(ca) + len(cb) - len(ca) * len(cb) - 1) / (2.0 * n)
    return float(mi + correction)


def estimate_cmi(event_times, censor_times, x, seed: int = 0) -> float:
    """Conditional mutual information I(E;C|X) in nats (may dip below 0)."""
    e = np.asarray(event_times, dtype=np.float64)
    c = np.asarray(censor_times, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if e.ndim != 1 or e.shape != c.shape or x.shape[0] != e.size:
        raise DataError("need matching event/censor vectors and covariate rows")
    if e.size < MIN_ROWS:
        raise DataError(f"CMI estimation needs at least {MIN_ROWS} rows")
    labels = _covariate_cells(x, seed)
    n = e.size
    total = 0.0
    for cell in np.unique(labels):
        rows = labels == cell
        n_c = int(rows.sum())
        if n_c < 2:
            continue
        k = _cell_bin_count(n_c)
        eb = _quantile_bins(e[rows], k)
        cb = _quantile_bins(c[rows], k)
        total += (n_c / n) * _plugin_mi_mm(eb, cb)
    return total


def conditional_entropy(times, x, seed: int = 0) -> float:
    """Average within-cell entropy of observed times over global bins."""
    t = np.asarray(times, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if t.ndim != 1 or x.shape[0] != t.size:
        raise DataError("need a time vector matching the covariate rows")
    if t.size < MIN_ROWS:
        raise DataError(f"entropy estimation needs at least {MIN_ROWS} rows")
    global_bins = _quantile_bins(t)
    labels = _covariate_cells(x, seed)
    n = t.size
    total = 0.0
    for cell in np.unique(labels):
        rows = labels == cell
        n_c = int(rows.sum())
        if n_c == 0:
            continue
        counts = np.bincount(global_bins[rows])
        p = counts[counts > 0] / n_c
        total += (n_c / n) * float(-np.sum(p * np.log(p)))
    return total


def observed_dispersion(times) -> float:
    """log10 CV of the observed times, floored at CV = 1e-12."""
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.size < 2:
        raise DataError("dispersion needs at least 2 observed times")
    sd = float(np.std(t, ddof=1))
    mean = abs(float(np.mean(t)))
    if mean < 1e-12:
        if sd > 0:
            warnings.warn("observed-time mean is zero; CV denominator floored")
        mean = 1e-12
    return float(np.log10(max(sd / mean, 1e-12)))


@dataclass(eq=False)
class CurveBands:
    """Pointwise percentile bands on the shared normalized time grid."""

    grid: np.ndarray  # normalized times in [0,1]
    percentiles: tuple  # e.g. (10, 25, 50, 75, 90)
    event: np.ndarray  # (len(percentiles), len(grid)) bands of P(E > t)
    censor: np.ndarray  # bands of P(C > t)
    km: np.ndarray  # bands of the KM estimate on observed pairs


def _task_arrays(task):
    e = np.concatenate([task.latent_event_times, task.query_event_times])
    c = np.concatenate([task.latent_censor_times, task.query_censor_times])
    return e, c, np.minimum(e, c), (e <= c).astype(np.int64)


def curve_bands(tasks, grid=None) -> CurveBands:
    """Median/IQR/decile bands of P(E>t), P(C>t), and KM across tasks."""
    tasks = list(tasks)
    if len(tasks) < 10:
        raise DataError("curve bands need at least 10 tasks")
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    grid = np.asarray(grid, dtype=np.float64)
    ev, ce, km = [], [], []
    for task in tasks:
        e, c, t, delta = _task_arrays(task)
        m = float(t.max())
        scale_grid = grid * (m if m > 0 else 1.0)
        ev.append(np.mean(e[None, :] > scale_grid[:, None], axis=1))
        ce.append(np.mean(c[None, :] > scale_grid[:, None], axis=1))
        fit = km_estimate(t, delta)
        km.append(step_eval(fit.times, fit.survival, scale_grid))
    q = np.array(BAND_PERCENTILES, dtype=np.float64)
    return CurveBands(
        grid=grid,
        percentiles=BAND_PERCENTILES,
        event=np.percentile(np.array(ev), q, axis=0),
        censor=np.percentile(np.array(ce), q, axis=0),
        km=np.percentile(np.array(km), q, axis=0),
    )


def task_diagnostics(task, seed: int = 0) -> dict:
    """Per-task summary: censoring rate, dispersion, entropy, CMI."""
    e, c, t, delta = _task_arrays(task)
    x = np.concatenate([task.context.x, task.x_query], axis=0)
    out = {
        "censoring_rate": float(np.mean(delta == 0)),
        "log10_cv": observed_dispersion(t),
    }
    out["conditional_entropy"] = conditional_entropy(t, x, seed) if t.size >= MIN_ROWS else None
    out["cmi"] = estimate_cmi(e, c, x, seed) if t.size >= MIN_ROWS else None
    return out
