from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nstamp.perception import (FEATURE_DIM, FORCE, VISION, CorrectionSample, DimensionMismatch,
                               Models, PoseEstimator, PredicateClassifier, PredicateReading,
                               classify, cross_entropy, cross_entropy_gradient, dumps_model,
                               estimate_pose, load_models, loads_model, perceive, pose_loss,
                               pose_loss_gradient, predict_proba, predicate_features,
                               save_models, update_classifier, update_pose_model)
from nstamp.world import DisturbanceConfig, Pose, execute_primitive, new_episode

from oracles import binary_cross_entropy, central_difference, half_squared_pose_error

finite = st.floats(-3.0, 3.0, allow_nan=False)


def random_pose_model(rng, modality=VISION):
    d = 5 if modality == VISION else 4
    return PoseEstimator(modality, np.eye(4, d) + 0.1 * rng.normal(size=(4, d)),
                         0.05 * rng.normal(size=4))


def random_classifier(rng, scale=0.3):
    return PredicateClassifier("target_aim", scale * rng.normal(size=FEATURE_DIM),
                               float(scale * rng.normal()))


def norm_relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# --------------------------------------------------------------------------
# pose estimators

def test_identity_estimator_passes_pose_through():
    obs = np.array([0.1, -0.2, 0.03, 0.5, 0.9])
    est = estimate_pose(PoseEstimator.identity(VISION), obs)
    assert est.as_array() == pytest.approx(obs[:4])


def test_affine_estimate_example():
    w = np.zeros((4, 4))
    w[0, 0] = 2.0
    est = estimate_pose(PoseEstimator(FORCE, w, np.array([0.0, 1.0, 0.0, 0.0])), [0.5, 0, 0, 0])
    assert est == Pose(1.0, 1.0, 0.0, 0.0)


def test_pose_loss_examples():
    assert pose_loss(Pose(0, 0, 0, 0), Pose(0, 0, 0, 0)) == 0.0
    assert pose_loss(Pose(0, 0, 0, 0), Pose(0.3, 0.4, 0, 0)) == pytest.approx(0.125)
    # the angle difference wraps: 3.1 and -3.1 are 0.083 rad apart
    near = pose_loss(Pose(0, 0, 0, 3.1), Pose(0, 0, 0, -3.1))
    assert near == pytest.approx(0.5 * (2 * math.pi - 6.2) ** 2)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        estimate_pose(PoseEstimator.identity(VISION), np.zeros(4))
    with pytest.raises(DimensionMismatch):
        classify(PredicateClassifier.zeros("near_screw"), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pose_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = random_pose_model(rng)
    obs = rng.normal(size=5)
    truth = Pose(*rng.normal(size=3), rng.uniform(-1, 1))
    gw, gb = pose_loss_gradient(model, obs, truth)

    def loss_w(w):
        return half_squared_pose_error(PoseEstimator(VISION, w, model.bias).weights @ obs + model.bias,
                                       truth.as_array())

    def loss_b(b):
        return half_squared_pose_error(model.weights @ obs + b, truth.as_array())

    assert norm_relative_error(gw, central_difference(loss_w, model.weights)) < 1e-4
    assert norm_relative_error(gb, central_difference(loss_b, model.bias)) < 1e-4


def test_pose_update_decreases_loss_monotonically():
    rng = np.random.default_rng(0)
    model = PoseEstimator.identity(FORCE, learning_rate=0.1)
    obs = np.array([0.1, 0.2, 0.01, 0.3])
    truth = Pose(0.13, 0.18, 0.02, 0.25)
    sample = CorrectionSample("pose", FORCE, obs, truth)
    losses = []
    for _ in range(50):
        losses.append(pose_loss(estimate_pose(model, obs), truth))
        model = update_pose_model(model, sample)
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.01 * losses[0]
    del rng


def test_pose_update_is_pure():
    model = PoseEstimator.identity(VISION)
    before = model.weights.copy()
    new = update_pose_model(model, CorrectionSample("pose", VISION, [0.1, 0, 0, 0, 1],
                                                    Pose(0, 0, 0, 0)))
    assert np.array_equal(model.weights, before)
    assert new != model
    with pytest.raises(ValueError):
        model.weights[0, 0] = 3.0


@given(finite, finite, finite, st.floats(-1.0, 1.0))
def test_pose_loss_is_symmetric(x, y, z, t):
    a, b = Pose(x, y, z, t), Pose(0.1, -0.2, 0.0, 0.3)
    assert pose_loss(a, b) == pytest.approx(pose_loss(b, a))
    assert pose_loss(a, a) == 0.0


# --------------------------------------------------------------------------
# classifiers

def test_tie_reads_false():
    r = classify(PredicateClassifier.zeros("socketed"), np.ones(FEATURE_DIM))
    assert r.value is False and r.confidence == 0.5 and r.p_true == 0.5


def test_reading_from_known_probabilities():
    z = math.log(0.7 / 0.3)
    clf = PredicateClassifier("near_screw", np.zeros(FEATURE_DIM), z)
    p0, p1 = predict_proba(clf, np.zeros(FEATURE_DIM))
    assert (p0, p1) == pytest.approx((0.3, 0.7))
    r = classify(clf, np.zeros(FEATURE_DIM))
    assert r.value is True and r.confidence == pytest.approx(0.7)


def test_cross_entropy_matches_reference():
    rng = np.random.default_rng(1)
    clf = random_classifier(rng)
    x = rng.normal(size=FEATURE_DIM)
    z = float(clf.weights @ x + clf.bias)
    for label in (False, True):
        assert cross_entropy(clf, x, label) == pytest.approx(binary_cross_entropy(z, label))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_classifier_gradient_matches_finite_differences(seed, label):
    rng = np.random.default_rng(seed)
    clf = random_classifier(rng)
    x = rng.normal(size=FEATURE_DIM)
    gw, gb = cross_entropy_gradient(clf, x, label)
    num_w = central_difference(lambda w: binary_cross_entropy(w @ x + clf.bias, label), clf.weights)
    num_b = central_difference(lambda b: binary_cross_entropy(clf.weights @ x + b[0], label),
                               np.array([clf.bias]))
    assert norm_relative_error(gw, num_w) < 1e-4
    assert norm_relative_error([gb], num_b) < 1e-4


def test_repeated_updates_flip_the_prediction():
    x = np.array([0.1, 0.2, 3.0, 0.0, 1.0, 0.5, 1.0])
    clf = PredicateClassifier("target_aim", np.zeros(FEATURE_DIM), 1.0, learning_rate=0.05)
    assert classify(clf, x).value is True
    sample = CorrectionSample("predicate", "target_aim", x, False)
    losses = []
    for _ in range(100):
        losses.append(cross_entropy(clf, x, False))
        clf = update_classifier(clf, sample)
    assert classify(clf, x).value is False
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_update_rejects_wrong_sample_kind():
    with pytest.raises(ValueError):
        update_classifier(PredicateClassifier.zeros("socketed"),
                          CorrectionSample("pose", VISION, [0] * 5, Pose(0, 0, 0, 0)))
    with pytest.raises(TypeError):
        CorrectionSample("predicate", "socketed", [0] * 7, Pose(0, 0, 0, 0))


@given(st.lists(st.floats(-1e6, 1e6), min_size=FEATURE_DIM, max_size=FEATURE_DIM))
def test_probabilities_are_complementary(x):
    clf = random_classifier(np.random.default_rng(2))
    p0, p1 = predict_proba(clf, x)
    assert p0 + p1 == 1.0
    r = classify(clf, x)
    assert 0.5 <= r.confidence <= 1.0
    assert r.value == (p1 > p0)


def test_reading_round_trip():
    r = classify(random_classifier(np.random.default_rng(3)), np.arange(FEATURE_DIM, dtype=float))
    assert PredicateReading.from_dict(r.to_dict()) == r


# --------------------------------------------------------------------------
# features and checkpoints

def test_feature_layout():
    est = Pose(0.10, 0.20, 0.01, 0.0)
    cmd = Pose(0.11, 0.18, 0.04, 0.0)
    coarse = Pose(0.12, 0.22, 0.01, 0.0)
    f = predicate_features([0.1, 0.2, 0.01, 0.0, 0.6], VISION, est, cmd, coarse)
    assert f == pytest.approx([1.0, 2.0, 3.0, 0.0, 1.0, 0.6, 1.0])
    g = predicate_features([0.1, 0.2, 0.01, 0.0], FORCE, est, cmd, coarse)
    assert g[4] == 0.0 and g[5] == 0.0


def test_perceive_is_deterministic():
    models = Models({m: PoseEstimator.identity(m) for m in (VISION, FORCE)})
    outs = []
    for _ in range(2):
        w = new_episode(DisturbanceConfig(), 3, 11)
        w, _ = execute_primitive(w, "Move", w.coarse_pose)
        outs.append(perceive(w, VISION, models))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][2], outs[1][2])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    models = Models({VISION: random_pose_model(rng), FORCE: random_pose_model(rng, FORCE)},
                    {"target_aim": random_classifier(rng)})
    for m in list(models.pose.values()) + list(models.predicates.values()):
        assert loads_model(dumps_model(m)) == m
    save_models(models, tmp_path)
    assert load_models(tmp_path) == models


def test_checkpoint_rejects_bad_header():
    with pytest.raises(ValueError):
        loads_model("something-else 1\npose vision\n")


def test_zero_weights_return_the_bias():
    b = np.array([0.1, -0.2, 0.3, 0.4])
    model = PoseEstimator(FORCE, np.zeros((4, 4)), b)
    for obs in (np.zeros(4), np.ones(4), np.arange(4.0)):
        assert estimate_pose(model, obs).as_array() == pytest.approx(b)


def test_unit_pose_difference():
    assert pose_loss(Pose(1, 0, 0, 0), Pose(0, 0, 0, 0)) == 0.5


def test_zero_error_sample_leaves_model_unchanged():
    model = PoseEstimator.identity(VISION)
    obs = np.array([0.1, 0.2, 0.03, 0.4, 0.7])
    sample = CorrectionSample("pose", VISION, obs, Pose(*obs[:4]))
    assert update_pose_model(model, sample) == model


def test_confident_correct_prediction_barely_moves():
    # p1 = 0.99 at label 1: the gradient is -0.01 * x
    x = np.full(FEATURE_DIM, 0.5)
    clf = PredicateClassifier("socketed", np.zeros(FEATURE_DIM), math.log(99.0), learning_rate=0.01)
    assert predict_proba(clf, x)[1] == pytest.approx(0.99)
    new = update_classifier(clf, CorrectionSample("predicate", "socketed", x, True))
    assert np.abs(new.weights - clf.weights).max() < 1e-2 * clf.learning_rate


def test_large_logit_saturates_confidence():
    clf = PredicateClassifier("socketed", np.zeros(FEATURE_DIM), 25.0)
    r = classify(clf, np.zeros(FEATURE_DIM))
    assert r.value is True and r.confidence > 1 - 1e-10


def test_trained_estimator_beats_raw_biased_vision():
    from nstamp.calibration import pose_dataset
    from nstamp.rng import stream
    from nstamp.world import LightingSchedule

    cfg = DisturbanceConfig(lighting=LightingSchedule.constant(1.0))
    obs, truth = pose_dataset(cfg, VISION, 500, stream(0, "train"), lighting_range=(0.5, 1.0))
    model = PoseEstimator.identity(VISION, learning_rate=0.05)
    for _ in range(5):
        for o, t in zip(obs, truth):
            model = update_pose_model(model, CorrectionSample("pose", VISION, o, t))
    test_obs, test_truth = pose_dataset(cfg, VISION, 200, stream(0, "test"), lighting_range=(0.5, 1.0))

    def rmse(m):
        return np.sqrt(np.mean([np.sum((estimate_pose(m, o).as_array()[:2] - t.as_array()[:2]) ** 2)
                                for o, t in zip(test_obs, test_truth)]))

    assert rmse(model) < 0.5 * rmse(PoseEstimator.identity(VISION))
