import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtp import statekit
from fairtp.errors import InvalidInputError
from fairtp.statekit import Discriminator, ThresholdSchedule

from oracles import central_difference, max_relative_error


@pytest.mark.parametrize("mape,expected", [(0.04, 1), (0.06, 0), (0.05, 0)])
def test_labels_against_threshold(mape, expected):
    assert statekit.label_states({7: mape}, 0.05) == {7: expected}


@settings(max_examples=200)
@given(st.floats(0, 10), st.floats(1e-6, 10), st.floats(1e-3, 1e3))
def test_labels_depend_only_on_the_comparison(mape, thr, c):
    assert statekit.label_states({0: mape}, thr) == statekit.label_states({0: mape * c}, thr * c) \
        or math.isclose(mape, thr)  # scaling can flip an exact tie by one ulp


def test_zero_discriminator_outputs_half():
    disc = Discriminator(np.zeros(4), 0.0, 0.1)
    assert statekit.discriminate(disc, np.ones(4)) == 0.5


def test_large_preactivation_stays_below_one():
    disc = Discriminator(np.array([20.0]), 0.0, 0.1)
    d = statekit.discriminate(disc, np.array([1.0]))
    assert d < 1.0
    assert 1.0 - d < 1e-8


def test_output_increases_with_preactivation():
    disc = Discriminator(np.array([1.0]), 0.0, 0.1)
    outs = [statekit.discriminate(disc, np.array([z])) for z in np.linspace(-8, 8, 50)]
    assert all(b > a for a, b in zip(outs, outs[1:]))


@settings(max_examples=100)
@given(st.floats(-1e4, 1e4))
def test_clipped_output_is_inside_the_open_interval(z):
    disc = Discriminator(np.array([1.0]), 0.0, 0.1)
    d, _ = statekit.discriminate_clipped(disc, np.array([[z]]))
    assert disc.prob_epsilon <= d[0] <= 1.0 - disc.prob_epsilon


def test_loss_at_half_with_label_one():
    assert statekit.discriminator_loss(0.5, 1) == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_at_clipped_optimum():
    eps = statekit.DEFAULT_PROB_EPSILON
    assert statekit.discriminator_loss(1.0, 1) == pytest.approx(-math.log(1.0 - eps), rel=1e-9)
    assert statekit.discriminator_loss(0.0, 0) == pytest.approx(-math.log(1.0 - eps), rel=1e-9)


def test_loss_with_label_one_decreases_in_d():
    d = np.linspace(0.01, 0.99, 99)
    losses = statekit.discriminator_loss(d, np.ones_like(d))
    assert np.all(np.diff(losses) < 0)


@settings(max_examples=100)
@given(st.floats(0, 1), st.sampled_from([0.0, 1.0]))
def test_loss_is_never_negative(d, y):
    assert statekit.discriminator_loss(d, y) >= 0.0


def test_gradient_vanishes_when_states_match_labels():
    disc = Discriminator(np.array([0.0, 0.0]), 0.0, 0.1)
    gw, gb = statekit.discriminator_gradient(disc, np.array([[1.0, 2.0], [3.0, -1.0]]),
                                             np.array([0.5, 0.5]))
    np.testing.assert_array_equal(gw, 0.0)
    assert gb == 0.0


def test_gradient_matches_finite_differences(rng):
    hidden = rng.normal(0, 1, (20, 6))
    labels = (rng.uniform(size=20) < 0.5).astype(float)
    disc = Discriminator(rng.normal(0, 0.5, 6), 0.2, 0.1)

    def loss(p):
        return statekit.batch_loss(Discriminator(p["w"], float(p["b"][0]), 0.1), hidden, labels)

    gw, gb = statekit.discriminator_gradient(disc, hidden, labels)
    numeric = central_difference(loss, {"w": disc.weights.copy(), "b": np.array([disc.bias])},
                                 eps=1e-5)
    assert max_relative_error({"w": gw, "b": np.array([gb])}, numeric) < 1e-6


def test_step_accepts_pairs_or_matrix(rng):
    hidden = rng.normal(0, 1, (5, 3))
    labels = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    disc = Discriminator.initial(3, rng)
    a = statekit.discriminator_step(disc, list(zip(hidden, labels)))
    b = statekit.discriminator_step(disc, (hidden, labels))
    np.testing.assert_array_equal(a.weights, b.weights)
    assert a.bias == b.bias


def test_separable_data_reaches_high_accuracy(rng):
    direction = rng.normal(0, 1, 8)
    direction /= np.linalg.norm(direction)
    hidden = rng.normal(0, 1, (400, 8))
    hidden += 1.5 * np.sign(hidden @ direction)[:, None] * direction
    labels = (hidden @ direction > 0).astype(float)
    disc = Discriminator.initial(8, rng, learning_rate=0.5)
    for _ in range(200):
        disc = statekit.discriminator_step(disc, (hidden, labels))
    assert statekit.accuracy(disc, hidden, labels) >= 0.95


def test_dimension_mismatch_is_rejected():
    with pytest.raises(InvalidInputError):
        statekit.discriminate(Discriminator(np.zeros(3), 0.0, 0.1), np.zeros(4))


def test_schedule_clamps_to_last_entry():
    sched = ThresholdSchedule((0.3, 0.2, 0.1))
    assert sched.threshold(0) == 0.3
    assert sched.threshold(9) == 0.1
    assert len(sched.extended(5)) == 5


def test_schedule_json_round_trip(tmp_path):
    sched = ThresholdSchedule((0.31, 0.2, 0.125))
    sched.save(tmp_path / "s.json")
    assert ThresholdSchedule.load(tmp_path / "s.json") == sched


def test_schedule_rejects_non_positive_entries():
    with pytest.raises(InvalidInputError):
        ThresholdSchedule((0.1, 0.0))
