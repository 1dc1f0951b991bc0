"""Monotone time transforms and the shared bin discretizer."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survpfn.errors import DataError
from survpfn.rng import RngStream
from survpfn.timewarp import (
    Binner,
    LognormalTransform,
    QuantileTransform,
    bin_index,
    bin_upper_times,
    fit_lognormal2normal,
    fit_time2quantile,
    fit_transform,
    lognormal_from_moments,
    make_binner,
    transform_from_dict,
)


# ---------------------------------------------------------------------------
# lognormal2normal


def test_lognormal_moment_formulas():
    tr = lognormal_from_moments(2.0, 1.0)
    sigma2 = math.log(1.0 + (1.0 / 2.0) ** 2)
    assert abs(tr.sigma**2 - sigma2) < 1e-12
    assert abs(tr.mu - (math.log(2.0) - sigma2 / 2.0)) < 1e-12
    assert abs(tr.forward(2.0) - (math.log(2.0) - tr.mu) / tr.sigma) < 1e-15


def test_lognormal_fit_uses_population_moments():
    # {1, 3}: mean 2, population std 1
    tr = fit_lognormal2normal(np.array([1.0, 3.0]))
    ref = lognormal_from_moments(2.0, 1.0)
    assert tr.mu == ref.mu and tr.sigma == ref.sigma


def test_lognormal_center_maps_to_zero():
    tr = fit_lognormal2normal(np.array([0.5, 2.0, 8.0, 3.0]))
    assert abs(tr.forward(math.exp(tr.mu))) < 1e-12


def test_lognormal_round_trip_reference_points():
    tr = fit_lognormal2normal(np.array([0.4, 1.0, 2.5, 10.0, 55.0]))
    for t in (0.1, 1.0, 50.0):
        assert abs(tr.inverse(tr.forward(t)) - t) <= 1e-9 * max(1.0, t)


def test_lognormal_degenerate_sample_floors_sigma():
    tr = fit_lognormal2normal(np.array([3.0, 3.0, 3.0]))
    assert tr.sigma == 1e-6


def test_lognormal_rejects_bad_samples():
    with pytest.raises(DataError):
        fit_lognormal2normal(np.array([2.0]))
    with pytest.raises(DataError):
        fit_lognormal2normal(np.array([0.0, 0.0]))
    with pytest.raises(DataError):
        fit_lognormal2normal(np.array([1.0, -2.0]))
    with pytest.raises(DataError):
        lognormal_from_moments(0.0, 1.0)


def test_lognormal_zero_time_maps_to_minus_inf():
    tr = fit_lognormal2normal(np.array([1.0, 2.0]))
    assert tr.forward(0.0) == -np.inf


# ---------------------------------------------------------------------------
# time2quantile


def test_quantile_fit_hand_example():
    tr = fit_time2quantile(np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_array_equal(tr.knots, [0.0, 1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(tr.cdf, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert tr.forward(2.5) == 0.625


def test_quantile_tail_and_origin_conventions():
    tr = fit_time2quantile(np.array([1.0, 2.0, 3.0, 4.0]))
    assert tr.forward(4.0) == 1.0
    assert tr.forward(9.0) == 1.0
    assert tr.forward(0.0) == 0.0


def test_quantile_duplicate_times_collapse_knots():
    tr = fit_time2quantile(np.array([2.0, 2.0, 5.0]))
    np.testing.assert_array_equal(tr.knots, [0.0, 2.0, 5.0])
    np.testing.assert_allclose(tr.cdf, [0.0, 2.0 / 3.0, 1.0])


def test_quantile_zeros_count_toward_n():
    tr = fit_time2quantile(np.array([0.0, 0.0, 1.0, 2.0]))
    np.testing.assert_array_equal(tr.knots, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(tr.cdf, [0.0, 0.75, 1.0])


def test_quantile_inverse_at_flat_segment_returns_left_endpoint():
    # duplicate times make the CDF jump; the inverse of an interior z in
    # the jump should land on the left raw endpoint of the flat segment
    tr = fit_time2quantile(np.array([1.0, 1.0, 1.0, 9.0]))
    assert tr.inverse(0.75) == 1.0
    assert tr.inverse(0.5) == pytest.approx(1.0 * 0.5 / 0.75)


def test_quantile_rejects_all_zero():
    with pytest.raises(DataError):
        fit_time2quantile(np.array([0.0, 0.0]))
    with pytest.raises(DataError):
        fit_time2quantile(np.array([]))


def test_fit_transform_dispatch():
    times = np.array([1.0, 2.0])
    assert isinstance(fit_transform("lognormal2normal", times), LognormalTransform)
    assert isinstance(fit_transform("time2quantile", times), QuantileTransform)
    with pytest.raises(DataError):
        fit_transform("spline", times)


def test_transform_dict_round_trip():
    for kind in ("lognormal2normal", "time2quantile"):
        tr = fit_transform(kind, np.array([0.5, 1.5, 4.0]))
        back = transform_from_dict(tr.to_dict())
        probe = np.array([0.7, 1.5, 3.9])
        np.testing.assert_array_equal(
            np.asarray(tr.forward(probe)), np.asarray(back.forward(probe))
        )
    with pytest.raises(DataError):
        transform_from_dict({"kind": "mystery"})


# ---------------------------------------------------------------------------
# binner


def test_binner_uniform_edges_quantile():
    tr = fit_time2quantile(np.array([1.0, 2.0, 3.0, 4.0]))
    binner = make_binner(tr, 4)
    np.testing.assert_allclose(binner.edges, [0.0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)
    assert binner.n_bins == 4


def test_binner_uniform_edges_lognormal():
    tr = fit_lognormal2normal(np.array([1.0, 2.0]))
    binner = make_binner(tr, 10)
    np.testing.assert_allclose(binner.edges, np.linspace(-5.0, 5.0, 11), atol=1e-15)
    widths = np.diff(binner.edges)
    np.testing.assert_allclose(widths, widths[0], atol=1e-15)


def test_binner_default_bin_count():
    tr = fit_time2quantile(np.array([1.0, 2.0]))
    assert make_binner(tr).n_bins == 1024


def test_binner_rejects_tiny():
    tr = fit_time2quantile(np.array([1.0]))
    with pytest.raises(DataError):
        make_binner(tr, 1)


def test_bin_index_hand_example():
    tr = fit_time2quantile(np.array([1.0, 2.0, 3.0, 4.0]))
    binner = make_binner(tr, 4)
    assert bin_index(binner, tr, 2.5) == 3  # g(2.5)=0.625 in (0.5, 0.75]
    assert bin_index(binner, tr, 0.0) == 1
    assert bin_index(binner, tr, 99.0) == 4
    assert bin_index(binner, tr, 2.0) == 2  # right-closed: g(2)=0.5 -> bin 2


def test_bin_upper_times_hand_example():
    tr = fit_time2quantile(np.array([1.0, 2.0, 3.0, 4.0]))
    binner = make_binner(tr, 4)
    np.testing.assert_allclose(bin_upper_times(binner, tr), [1.0, 2.0, 3.0, 4.0], atol=1e-12)


def test_bin_upper_times_monotone_lognormal():
    tr = fit_lognormal2normal(np.array([0.2, 1.0, 7.0]))
    uppers = bin_upper_times(make_binner(tr, 16), tr)
    assert np.all(np.diff(uppers) > 0)


def test_bin_index_consistent_with_upper_times():
    tr = fit_lognormal2normal(np.array([0.5, 1.0, 3.0, 9.0]))
    binner = make_binner(tr, 32)
    uppers = bin_upper_times(binner, tr)
    g = RngStream(40).derive("t").generator()
    for t in g.uniform(0.6, 8.0, 50):
        k = bin_index(binner, tr, float(t))
        assert t <= uppers[k - 1] + 1e-12
        if k > 1:
            assert t > uppers[k - 2] - 1e-12


def test_bin_index_order_preserving():
    g = RngStream(41).derive("t").generator()
    times = np.sort(g.uniform(0.1, 20.0, 64))
    for kind in ("lognormal2normal", "time2quantile"):
        tr = fit_transform(kind, times[:32])
        binner = make_binner(tr, 8)
        idx = bin_index(binner, tr, times)
        assert np.all(np.diff(idx) >= 0)


# ---------------------------------------------------------------------------
# property tests


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 50))
def test_round_trip_property_both_kinds(seed, n):
    g = RngStream(seed).derive("fit").generator()
    times = g.lognormal(0.0, 1.0, n) + 1e-3
    for kind in ("lognormal2normal", "time2quantile"):
        tr = fit_transform(kind, times)
        lo, hi = float(times.min()), float(times.max())
        probes = g.uniform(lo + 1e-9 * (hi - lo + 1), hi - 1e-9 * (hi - lo + 1), 16)
        if lo >= hi:
            continue
        for t in probes:
            rt = tr.inverse(tr.forward(float(t)))
            assert abs(rt - t) <= 1e-9 * max(1.0, t)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_monotone_property(seed):
    g = RngStream(seed).derive("fit").generator()
    times = g.lognormal(0.5, 1.2, 24)
    ts = np.sort(g.uniform(0.0, times.max() * 1.5, 32))
    for kind in ("lognormal2normal", "time2quantile"):
        tr = fit_transform(kind, times)
        with np.errstate(divide="ignore"):
            z = np.asarray(tr.forward(ts))
        assert np.all(np.diff(z) >= -1e-12)
