"""Learner behavior: kNN and naive-Bayes against closed forms, forest
behavior, degenerate single-class pools, and model JSON round-trips."""

import math

import numpy as np
import pytest

from edig.learners import (KINDS, LearnerConfig, LearnerError, Model, Prediction,
                           fit, predict, predict_proba)


def separable(rng, n=60, d=4):
    X = rng.normal(0, 1, (n, d))
    y = (X[:, 0] > 0).astype(np.int64)
    return X, y


# ---------------------------------------------------------------------------
# Config and prediction containers
# ---------------------------------------------------------------------------


def test_config_validation_and_roundtrip():
    cfg = LearnerConfig(kind="knn", k=3)
    assert LearnerConfig.from_dict(cfg.to_dict()) == cfg
    LearnerConfig(kind="random_forest", max_depth=0)  # stump allowed
    with pytest.raises(LearnerError):
        LearnerConfig(kind="svm")
    with pytest.raises(LearnerError):
        LearnerConfig(k=0)
    with pytest.raises(LearnerError):
        LearnerConfig(max_depth=-1)
    with pytest.raises(LearnerError):
        LearnerConfig.from_dict({"kind": "knn", "gamma": 1.0})


def test_prediction_container():
    p = Prediction.from_probs([0.2, 0.5, 0.3])
    assert p.predicted == 1
    assert abs(p.confidence - 0.5) < 1e-12
    tie = Prediction.from_probs([0.5, 0.5])
    assert tie.predicted == 0  # lowest index wins ties
    with pytest.raises(LearnerError):
        Prediction.from_probs([0.2, 0.2])
    with pytest.raises(LearnerError):
        Prediction(class_probs=np.array([0.4, 0.6]), predicted=0)


# ---------------------------------------------------------------------------
# kNN against a from-first-principles reference
# ---------------------------------------------------------------------------


def bf_knn_probs(Xt, yt, k, n_classes, q):
    dists = [(float(np.sum((x - q) ** 2)), i) for i, x in enumerate(Xt)]
    dists.sort(key=lambda t: (t[0], t[1]))  # stable: lower index on ties
    votes = np.zeros(n_classes)
    for _, i in dists[:k]:
        votes[yt[i]] += 1
    return votes / k


def test_knn_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(5, 25))
        k = int(rng.integers(1, min(n, 7) + 1))
        X = rng.normal(0, 1, (n, 3))
        y = rng.integers(0, 3, n)
        model = fit(LearnerConfig(kind="knn", k=k), X, y, 3)
        Q = rng.normal(0, 1, (6, 3))
        got = predict_proba(model, Q)
        for qi, q in enumerate(Q):
            ref = bf_knn_probs(X, y, k, 3, q)
            assert np.allclose(got[qi], ref, atol=1e-12), (trial, qi)


def test_knn_caps_k_at_pool_size():
    X = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    model = fit(LearnerConfig(kind="knn", k=10), X, y, 2)
    probs = predict_proba(model, np.array([[0.4]]))
    assert np.allclose(probs, [[0.5, 0.5]])


# ---------------------------------------------------------------------------
# Gaussian naive Bayes against the closed form
# ---------------------------------------------------------------------------


def test_nb_matches_closed_form():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array([0, 0, 1, 1])
    model = fit(LearnerConfig(kind="gaussian_nb"), X, y, 2)
    q = 2.0
    # per-class population variance 0.25, means 0.5 and 10.5, priors 1/2
    like = []
    for mu in (0.5, 10.5):
        like.append(0.5 * math.exp(-((q - mu) ** 2) / (2 * 0.25))
                    / math.sqrt(2 * math.pi * 0.25))
    expect = np.array(like) / sum(like)
    got = predict_proba(model, np.array([[q]]))[0]
    assert np.allclose(got, expect, atol=1e-12)


def test_nb_multifeature_independence():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 1, (40, 2)), rng.normal(3, 1, (40, 2))])
    y = np.repeat([0, 1], 40)
    model = fit(LearnerConfig(kind="gaussian_nb"), X, y, 2)
    probs = predict_proba(model, np.array([[0.0, 0.0], [3.0, 3.0]]))
    assert probs[0, 0] > 0.9
    assert probs[1, 1] > 0.9


def test_nb_handles_absent_class():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([0, 0, 0])
    model = fit(LearnerConfig(kind="gaussian_nb"), X, y, n_classes=2)
    assert model.degenerate
    probs = predict_proba(model, np.array([[5.0]]))
    assert np.allclose(probs, [[1.0, 0.0]])


# ---------------------------------------------------------------------------
# Trees and forests
# ---------------------------------------------------------------------------


def test_decision_tree_is_deterministic_and_fits_training_data():
    rng = np.random.default_rng(2)
    X, y = separable(rng, n=40)
    cfg = LearnerConfig(kind="decision_tree", max_depth=8, min_leaf=1)
    m1 = fit(cfg, X, y, 2)
    m2 = fit(LearnerConfig(kind="decision_tree", max_depth=8, min_leaf=1,
                           seed=999), X, y, 2)
    p1 = predict_proba(m1, X)
    p2 = predict_proba(m2, X)
    assert np.array_equal(p1, p2)  # no randomness left in a plain tree
    assert (np.argmax(p1, axis=1) == y).mean() == 1.0


def test_forest_accuracy_and_determinism():
    rng = np.random.default_rng(3)
    X, y = separable(rng, n=120)
    Xq, yq = separable(rng, n=60)
    cfg = LearnerConfig(kind="random_forest", n_trees=30, max_depth=6, seed=5)
    m1 = fit(cfg, X, y, 2)
    m2 = fit(cfg, X, y, 2)
    assert np.array_equal(predict_proba(m1, Xq), predict_proba(m2, Xq))
    acc = (np.argmax(predict_proba(m1, Xq), axis=1) == yq).mean()
    assert acc > 0.85
    m3 = fit(LearnerConfig(kind="random_forest", n_trees=30, max_depth=6,
                           seed=6), X, y, 2)
    assert not np.array_equal(predict_proba(m1, Xq), predict_proba(m3, Xq))


def test_forest_probs_are_distributions():
    rng = np.random.default_rng(4)
    X, y = separable(rng)
    model = fit(LearnerConfig(kind="random_forest", n_trees=15), X, y, 2)
    probs = predict_proba(model, rng.normal(0, 1, (25, 4)))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert (probs >= 0).all()


def test_stump_predicts_prior():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 1, 1, 1])
    cfg = LearnerConfig(kind="decision_tree", max_depth=0)
    model = fit(cfg, X, y, 2)
    probs = predict_proba(model, np.array([[9.9]]))
    assert np.allclose(probs, [[0.25, 0.75]])


def test_degenerate_single_class_pool():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    y = np.array([1, 1])
    for kind in KINDS:
        model = fit(LearnerConfig(kind=kind, k=1), X, y, n_classes=3)
        assert model.degenerate
        probs = predict_proba(model, np.array([[0.5, 0.5], [9.0, 9.0]]))
        assert np.allclose(probs, [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        pred = predict(model, np.array([0.5, 0.5]))
        assert pred.predicted == 1 and pred.confidence == 1.0


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
def test_model_json_roundtrip_preserves_predictions(kind):
    rng = np.random.default_rng(5)
    X, y = separable(rng, n=50)
    cfg = LearnerConfig(kind=kind, k=3, n_trees=8, max_depth=5)
    model = fit(cfg, X, y, 2)
    text = model.to_json()
    back = Model.from_json(text)
    Q = rng.normal(0, 1, (20, 4))
    assert np.array_equal(predict_proba(model, Q), predict_proba(back, Q))
    assert back.kind == kind
    assert back.n_classes == model.n_classes


def test_model_json_rejects_garbage():
    with pytest.raises(LearnerError):
        Model.from_json("{}")
    with pytest.raises(LearnerError):
        Model.from_json("not json at all")


# ---------------------------------------------------------------------------
# Input validation
# ---------------------------------------------------------------------------


def test_fit_validates_inputs():
    X = np.zeros((3, 2))
    with pytest.raises(LearnerError):
        fit(LearnerConfig(kind="knn"), X, np.array([0, 1]), 2)
    with pytest.raises(LearnerError):
        fit(LearnerConfig(kind="knn"), np.zeros((0, 2)), np.array([]), 2)
    with pytest.raises(LearnerError):
        fit(LearnerConfig(kind="knn"), X, np.array([0, 1, 5]), 2)


def test_predict_validates_feature_width():
    rng = np.random.default_rng(6)
    X, y = separable(rng, n=20)
    model = fit(LearnerConfig(kind="knn", k=3), X, y, 2)
    with pytest.raises(LearnerError):
        predict_proba(model, np.zeros((2, 9)))
