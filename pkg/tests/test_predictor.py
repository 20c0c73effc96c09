import numpy as np
import pytest

from fairtp import predictor
from fairtp.domain import RoadNetwork
from fairtp.errors import EmptyRegionError, InvalidInputError
from fairtp.predictor import LossConfig, ReferencePredictor, composite_loss, loss_and_gradients
from fairtp.sampler import StateLedger

from cases import build_case, gradient_error
from oracles import loop_forward


def test_zero_model_predicts_zero():
    out = ReferencePredictor.zeros(3, 2, 4).forward(np.arange(6.0).reshape(3, 2))
    np.testing.assert_array_equal(out.predictions, 0.0)
    np.testing.assert_array_equal(out.hidden, 0.0)


def test_scalar_identity_configuration_gives_tanh():
    model = ReferencePredictor(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    x = np.array([[0.3, -1.2, 4.0]])
    np.testing.assert_allclose(model.forward(x).predictions, np.tanh(x), rtol=1e-15)


def test_forward_matches_loop_oracle(rng):
    model = ReferencePredictor.initial(5, 3, 4, rng)
    window = rng.normal(0, 1, (5, 7))
    preds, hidden = loop_forward(model.w_in, model.b_in, model.w_out, model.b_out, window)
    out = model.forward(window)
    np.testing.assert_allclose(out.predictions, preds, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(out.hidden, hidden, rtol=1e-12, atol=1e-14)


def test_normalization_maps_back_to_data_units(rng):
    base = ReferencePredictor.initial(4, 2, 3, rng)
    scaled = ReferencePredictor(base.w_in, base.b_in, base.w_out, base.b_out, loc=50.0, scale=8.0)
    window = rng.normal(50, 8, (4, 5))
    want = base.forward((window - 50.0) / 8.0).predictions * 8.0 + 50.0
    np.testing.assert_allclose(scaled.forward(window).predictions, want, rtol=1e-12)


def test_sensor_permutation_equivariance(rng):
    model = ReferencePredictor.initial(6, 3, 4, rng)
    windows = rng.normal(0, 1, (2, 6, 9))
    perm = rng.permutation(9)
    a = model.forward_batch(windows).predictions[..., perm]
    b = model.forward_batch(windows[..., perm]).predictions
    np.testing.assert_allclose(a, b, rtol=1e-13)


def test_forward_rejects_wrong_lookback():
    with pytest.raises(InvalidInputError):
        ReferencePredictor.zeros(3, 2, 2).forward_batch(np.zeros((1, 4, 2)))


def test_checkpoint_round_trip(tmp_path, rng):
    model = ReferencePredictor.initial(5, 3, 4, rng, loc=12.5, scale=3.0)
    model.save(tmp_path / "m.json")
    back = ReferencePredictor.load(tmp_path / "m.json")
    for name in model.PARAMS:
        np.testing.assert_array_equal(getattr(back, name), getattr(model, name))
    assert (back.loc, back.scale) == (12.5, 3.0)


def test_checkpoint_with_wrong_header_is_rejected(rng):
    doc = ReferencePredictor.initial(5, 3, 4, rng).to_dict()
    doc["hidden_dim"] = 7
    with pytest.raises(InvalidInputError, match="header"):
        ReferencePredictor.from_dict(doc)
    doc["version"] = 99
    with pytest.raises(InvalidInputError, match="version"):
        ReferencePredictor.from_dict(doc)


def test_weighted_sum_arithmetic():
    assert predictor.weighted_total(1.0, 0.5, 2.0, 0.01, 0.1) == 1.0 + 0.005 + 0.2
    assert predictor.weighted_total(1.0, 0.5, 2.0, 0.01, 0.1) == pytest.approx(1.205, abs=1e-15)


def test_composite_loss_terms(rng):
    _, _, truth, net, sampled, _, prior = build_case(1)
    pred = truth + rng.normal(0, 3, truth.shape)
    states = rng.uniform(size=sampled.size)
    total, (acc, rsf, sdf) = composite_loss(pred, truth, net, sampled, states, prior,
                                            0.01, 0.1, include_sdf=True)
    assert min(acc, rsf, sdf) >= 0.0
    assert total == acc + 0.01 * rsf + 0.1 * sdf
    zero_w, _ = composite_loss(pred, truth, net, sampled, states, prior, 0.0, 0.0, True)
    assert zero_w == acc
    _, (_, _, gated) = composite_loss(pred, truth, net, sampled, states, prior, 0.01, 0.1, False)
    assert gated == 0.0


def test_composite_loss_agrees_with_training_step():
    model, windows, truth, net, sampled, disc, prior = build_case(2)
    step = loss_and_gradients(model, windows, truth, net, sampled, LossConfig(),
                              include_sdf=True, disc=disc, prior=prior)
    total, _ = composite_loss(step.forward.predictions, truth, net, sampled, step.states, prior,
                              0.01, 0.1, include_sdf=True)
    assert total == pytest.approx(step.terms.total, rel=1e-12)


def test_subset_missing_region_raises():
    _, _, truth, net, _, _, prior = build_case(0)
    sampled = np.array([0, 2, 3, 7, 1, 4])  # region 2 absent
    with pytest.raises(EmptyRegionError):
        composite_loss(truth, truth, net, sampled, np.full(6, 0.5), prior, 0.01, 0.1, False)


@pytest.mark.parametrize("seed", range(10))
def test_accuracy_gradient_matches_finite_differences(seed):
    err, _ = gradient_error(seed, LossConfig(0.0, 0.0), include_sdf=False)
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_composite_gradient_matches_finite_differences(seed):
    # large weights so the fairness terms are not drowned out by the MAE term
    err, margin = gradient_error(seed, LossConfig(lambda_rsf=5.0, lambda_sdf=50.0),
                                 include_sdf=True)
    assert margin > 1e-4, "case sits too close to a kink to be checked"
    assert err < 1e-3


def test_zero_residual_gives_zero_accuracy_gradient():
    model, windows, _, net, sampled, _, _ = build_case(4)
    truth = model.forward_batch(windows).predictions
    step = loss_and_gradients(model, windows, truth, net, sampled, LossConfig(0.0, 0.0))
    for g in step.grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_loss_decreases_under_small_steps():
    model, windows, truth, net, sampled, disc, prior = build_case(5)
    config = LossConfig()
    losses = []
    for _ in range(50):
        step = loss_and_gradients(model, windows, truth, net, sampled, config,
                                  include_sdf=True, disc=disc, prior=prior)
        losses.append(step.terms.total)
        model = model.apply_gradients(step.grads, 1e-4)
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_gradient_clipping_caps_the_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([12.0])}
    clipped = predictor.clip_gradients(grads, 5.0)
    assert predictor.gradient_norm(clipped) == pytest.approx(5.0)
    assert predictor.clip_gradients({"a": np.array([1.0])}, 5.0)["a"][0] == 1.0


def test_sdf_gradient_is_cut_by_fixed_states():
    model, windows, truth, net, sampled, disc, prior = build_case(6)
    config = LossConfig(0.0, 1.0)
    base = loss_and_gradients(model, windows, truth, net, sampled, LossConfig(0.0, 0.0))
    fixed = loss_and_gradients(model, windows, truth, net, sampled, config, include_sdf=True,
                               disc=disc, prior=prior, fixed_states=np.ones(sampled.size))
    for k in base.grads:
        np.testing.assert_array_equal(base.grads[k], fixed.grads[k])


def test_reference_model_satisfies_contract():
    assert isinstance(ReferencePredictor.zeros(2, 2, 2), predictor.PredictorContract)


def test_empty_prior_window_is_allowed():
    model, windows, truth, net, sampled, disc, _ = build_case(7)
    step = loss_and_gradients(model, windows, truth, net, sampled, LossConfig(),
                              include_sdf=True, disc=disc, prior=StateLedger.empty(3, 9))
    assert step.terms.sdf >= 0.0
