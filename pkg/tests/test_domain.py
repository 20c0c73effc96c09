import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtp.domain import (RoadNetwork, TrafficSeries, region_means, regionalize,
                           regionalize_subset)
from fairtp.errors import EmptyRegionError, InvalidInputError

from oracles import loop_region_means


def test_region_value_is_arithmetic_mean():
    net = RoadNetwork(np.array([0, 0]))
    assert region_means(np.array([[2.0, 4.0]]), net)[0, 0] == 3.0


def test_single_sensor_region_is_identity():
    net = RoadNetwork(np.array([0, 0, 1]))
    vals = np.array([[1.0, 2.0, 7.25], [0.0, 0.0, -3.5]])
    np.testing.assert_array_equal(region_means(vals, net)[:, 1], [7.25, -3.5])


def test_subset_mean_ignores_unsampled_sensor():
    net = RoadNetwork(np.array([0, 0, 0]))
    vals = np.array([[1.0, 3.0, 100.0]])
    assert region_means(vals, net, sampled=[0, 1])[0, 0] == 2.0


def test_random_instance_matches_loop_oracle(rng):
    region_of = [0, 1, 2, 0, 1, 2, 2, 0]
    vals = rng.normal(50, 20, (5, len(region_of)))
    got = region_means(vals, RoadNetwork(np.array(region_of)))
    np.testing.assert_allclose(got, loop_region_means(vals, region_of), rtol=1e-12)


def test_random_subset_matches_loop_oracle(rng):
    region_of = [0, 1, 2, 0, 1, 2, 2, 0, 1]
    sampled = [0, 1, 5, 6, 8]
    vals = rng.normal(50, 20, (7, len(region_of)))
    got = region_means(vals, RoadNetwork(np.array(region_of)), sampled)
    np.testing.assert_allclose(got, loop_region_means(vals, region_of, set(sampled)), rtol=1e-12)


def test_subset_of_everything_equals_full_regionalize(rng):
    net = RoadNetwork(np.array([1, 0, 1, 2, 0, 2]))
    series = TrafficSeries(rng.normal(10, 3, (30, 6)))
    full = regionalize(series, net)
    sub = regionalize_subset(series, net, range(6))
    np.testing.assert_array_equal(full.values, sub.values)


def test_subset_missing_a_region_raises():
    net = RoadNetwork(np.array([0, 0, 1]))
    with pytest.raises(EmptyRegionError):
        region_means(np.ones((2, 3)), net, sampled=[0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=4, max_size=20), st.randoms(use_true_random=False))
def test_means_are_invariant_to_sensor_order_within_region(labels, rnd):
    labels = sorted(set(labels)) + labels  # every region id present
    region_of = np.array(labels)
    region_of = np.searchsorted(np.unique(region_of), region_of)
    rng = np.random.default_rng(rnd.randrange(2**32))
    vals = rng.normal(0, 100, (3, region_of.size))
    perm = np.array(rnd.sample(range(region_of.size), region_of.size))
    a = region_means(vals, RoadNetwork(region_of))
    b = region_means(vals[:, perm], RoadNetwork(region_of[perm]))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_network_rejects_gap_in_region_ids():
    with pytest.raises(InvalidInputError, match="without sensors"):
        RoadNetwork(np.array([0, 2]))


def test_network_rejects_edge_outside_graph():
    with pytest.raises(InvalidInputError):
        RoadNetwork(np.array([0, 0]), frozenset({(0, 5)}))


def test_network_members_and_sizes():
    net = RoadNetwork(np.array([1, 0, 1, 1]))
    assert net.m == 2
    np.testing.assert_array_equal(net.members(1), [0, 2, 3])
    np.testing.assert_array_equal(net.region_sizes(), [1, 3])


def test_windows_slice_lookback_and_horizon():
    vals = np.arange(20, dtype=float).reshape(10, 2)
    series = TrafficSeries(vals, lookback=3, horizon=2)
    assert series.window_count() == 6
    x, y = series.windows([1])
    np.testing.assert_array_equal(x[0], vals[1:4])
    np.testing.assert_array_equal(y[0], vals[4:6])


def test_series_rejects_non_finite_values():
    vals = np.ones((30, 2))
    vals[3, 1] = np.nan
    with pytest.raises(InvalidInputError):
        TrafficSeries(vals)
