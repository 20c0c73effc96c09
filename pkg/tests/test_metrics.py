import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtp import metrics
from fairtp.errors import InvalidInputError

from oracles import pair_mean

finite = st.floats(-1e3, 1e3, allow_nan=False)
rates = st.floats(0.0, 5.0, allow_nan=False)


def test_mape_single_entry():
    value, masked = metrics.mape([1.1], [1.0])
    assert value == pytest.approx(0.1, rel=1e-12)
    assert masked == 0


def test_mape_of_exact_prediction_is_zero():
    assert metrics.mape([3.0, 4.0], [3.0, 4.0]) == (0.0, 0)


def test_mape_masks_zero_truth():
    value, masked = metrics.mape([5.0, 2.2], [0.0, 2.0])
    assert masked == 1
    assert value == pytest.approx(0.1)


def test_mae_and_rmse_by_hand():
    pred, truth = np.array([1.0, 2.0, 5.0]), np.array([2.0, 2.0, 1.0])
    assert metrics.mae(pred, truth) == pytest.approx(5.0 / 3.0)
    assert metrics.rmse(pred, truth) == pytest.approx(np.sqrt(17.0 / 3.0))


@pytest.mark.parametrize("a,b,expected", [(0.1, 0.1, 0.0), (0.2, 0.05, 0.15)])
def test_rsf_pair_examples(a, b, expected):
    assert metrics.rsf_pair(a, b) == pytest.approx(expected)


@pytest.mark.parametrize("a,b,expected", [(1.5, 1.5, 0.0), (1.5, -0.5, 2.0)])
def test_sdf_pair_examples(a, b, expected):
    assert metrics.sdf_pair(a, b) == expected


@settings(max_examples=100)
@given(finite, finite)
def test_pair_terms_are_symmetric(a, b):
    assert metrics.rsf_pair(a, b) == metrics.rsf_pair(b, a)
    assert metrics.sdf_pair(a, b) == metrics.sdf_pair(b, a)


def test_rsf_three_regions():
    # pairs: |.1-.2| + |.1-.4| + |.2-.4| = .1 + .3 + .2, over 3 pairs
    assert metrics.rsf_loss([0.1, 0.2, 0.4]) == pytest.approx(0.2, rel=1e-12)


def test_rsf_equal_regions_is_zero():
    assert metrics.rsf_loss([0.3, 0.3, 0.3, 0.3]) == 0.0


def test_sdf_three_sensors():
    assert metrics.sdf_loss([0.0, 1.0, 2.0]) == pytest.approx(4.0 / 3.0, rel=1e-12)


def test_sdf_constant_map_is_exactly_zero():
    assert metrics.sdf_loss([0.7] * 9) == 0.0


def test_losses_reject_too_few_items():
    with pytest.raises(InvalidInputError):
        metrics.rsf_loss([0.1])
    with pytest.raises(InvalidInputError):
        metrics.sdf_loss([0.1])


def test_random_instances_match_double_loop(rng):
    for _ in range(100):
        m = int(rng.integers(2, 7))
        n = int(rng.integers(2, 51))
        mapes = rng.uniform(0, 1, m)
        D = rng.normal(0, 2, n)
        assert metrics.rsf_loss(mapes) == pytest.approx(pair_mean(mapes), rel=1e-10)
        assert metrics.sdf_loss(D) == pytest.approx(pair_mean(D), rel=1e-10)
        value, _ = metrics.pairwise_mean_abs_diff_grad(D)
        assert metrics.pairwise_mean_abs_diff(D) == pytest.approx(value, rel=1e-10)


def test_quadratic_gradient_by_hand():
    value, grad = metrics.pairwise_mean_abs_diff_grad(np.array([0.0, 1.0, 2.0]))
    assert value == pytest.approx(4.0 / 3.0)
    # d/dx0 = (-1 -1)/3, d/dx1 = (+1 -1)/3, d/dx2 = (+1 +1)/3
    np.testing.assert_allclose(grad, [-2 / 3, 0.0, 2 / 3])


def test_gradient_of_tied_pair_uses_zero_subgradient():
    _, grad = metrics.pairwise_mean_abs_diff_grad(np.array([1.0, 1.0]))
    np.testing.assert_array_equal(grad, [0.0, 0.0])


@settings(max_examples=100)
@given(st.lists(rates, min_size=2, max_size=12), st.randoms(use_true_random=False))
def test_relabeling_invariance(xs, rnd):
    shuffled = list(xs)
    rnd.shuffle(shuffled)
    assert metrics.rsf_loss(shuffled) == pytest.approx(metrics.rsf_loss(xs), rel=1e-12, abs=1e-12)
    assert metrics.sdf_loss(shuffled) == pytest.approx(metrics.sdf_loss(xs), rel=1e-12, abs=1e-12)


@settings(max_examples=100)
@given(st.lists(rates, min_size=2, max_size=12), st.data(), st.floats(-1.0, 1.0))
def test_rsf_moves_at_most_two_delta_over_m(xs, data, delta):
    i = data.draw(st.integers(0, len(xs) - 1))
    moved = list(xs)
    moved[i] += delta
    change = abs(metrics.rsf_loss(moved) - metrics.rsf_loss(xs))
    assert change <= 2 * abs(delta) / len(xs) + 1e-12


@settings(max_examples=100)
@given(st.lists(finite, min_size=2, max_size=30), st.floats(-100, 100))
def test_sdf_is_translation_invariant(xs, c):
    shifted = [x + c for x in xs]
    assert metrics.sdf_loss(shifted) == pytest.approx(metrics.sdf_loss(xs), rel=1e-9, abs=1e-9)


def test_report_round_trips_through_dict():
    summ = metrics.accuracy_summary([1.0, 2.0], [1.5, 2.0])
    rep = metrics.FairnessReport({0: summ, 1: summ}, {0: summ, 3: summ}, 0.0, 0.5,
                                 {"L": 1.0}, summ)
    assert metrics.FairnessReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()
