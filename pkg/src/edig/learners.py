"""Probabilistic classifiers used for uncertainty ranking.

Four learners behind one config/fit/predict surface: k-nearest-neighbor,
Gaussian naive Bayes, a single CART decision tree, and a random forest.
Tree fitting runs on the kernels in :mod:`edig._kernels`, so it is
bit-reproducible for a given seed on either kernel backend. Probabilities
are not calibrated; they only need to rank consistently.

Models are immutable after ``fit`` and safe to share across threads. They
serialize to a versioned JSON document (tree node arrays inlined) so a
labeling session can be persisted and resumed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels

KINDS = ("knn", "gaussian_nb", "decision_tree", "random_forest")

_NB_VAR_FLOOR = 1e-9
_MODEL_FORMAT = "edig-model"
_MODEL_VERSION = 1


class LearnerError(ValueError):
    """Invalid learner configuration or training/prediction input."""


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters for one learner.

    ``kind`` selects the algorithm; fields not used by that kind are
    ignored. ``feature_subsample`` is the per-split feature count for the
    forest; ``None`` means floor(sqrt(d)), never below 1.
    """

    kind: str = "random_forest"
    k: int = 5
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    feature_subsample: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        if self.k < 1:
            raise LearnerError("k must be >= 1")
        if self.n_trees < 1:
            raise LearnerError("n_trees must be >= 1")
        # depth 0 is allowed: a root-only stump that predicts its sample prior
        if self.max_depth < 0:
            raise LearnerError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise LearnerError("min_leaf must be >= 1")
        if self.feature_subsample is not None and self.feature_subsample < 1:
            raise LearnerError("feature_subsample must be >= 1 when given")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "LearnerConfig":
        allowed = {f for f in LearnerConfig.__dataclass_fields__}
        extra = set(d) - allowed
        if extra:
            raise LearnerError(f"unknown learner config fields: {sorted(extra)}")
        return LearnerConfig(**d)


@dataclass(frozen=True)
class Prediction:
    """Class posterior for one instance.

    ``predicted`` is the argmax class, lowest index winning ties, and
    ``confidence`` is that class's probability.
    """

    class_probs: np.ndarray
    predicted: int

    def __post_init__(self):
        p = np.asarray(self.class_probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise LearnerError("class_probs must be a vector over >= 2 classes")
        if (p < 0).any() or abs(p.sum() - 1.0) >= 1e-9:
            raise LearnerError("class_probs must be nonnegative and sum to 1")
        if self.predicted != int(np.argmax(p)):
            raise LearnerError("predicted must be the argmax class")
        p.setflags(write=False)
        object.__setattr__(self, "class_probs", p)

    @property
    def confidence(self) -> float:
        return float(self.class_probs[self.predicted])

    @staticmethod
    def from_probs(probs: np.ndarray) -> "Prediction":
        probs = np.asarray(probs, dtype=np.float64)
        return Prediction(class_probs=probs, predicted=int(np.argmax(probs)))


class Model:
    """Fitted classifier; construct via :func:`fit` or :meth:`from_json`."""

    __slots__ = ("config", "n_classes", "n_features", "degenerate_class", "_payload")

    def __init__(self, config, n_classes, n_features, degenerate_class, payload):
        self.config = config
        self.n_classes = n_classes
        self.n_features = n_features
        self.degenerate_class = degenerate_class
        self._payload = payload

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def degenerate(self) -> bool:
        """True when training saw a single class; predictions are that class."""
        return self.degenerate_class is not None

    def to_json(self) -> str:
        doc = {
            "format": _MODEL_FORMAT,
            "version": _MODEL_VERSION,
            "config": self.config.to_dict(),
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "degenerate_class": self.degenerate_class,
        }
        p = self._payload
        if self.degenerate:
            pass
        elif self.kind == "knn":
            doc["train_x"] = p["X"].tolist()
            doc["train_y"] = p["y"].tolist()
        elif self.kind == "gaussian_nb":
            doc["class_counts"] = p["counts"].tolist()
            doc["means"] = p["means"].tolist()
            doc["variances"] = p["vars"].tolist()
        else:
            trees = []
            for t in range(p["features"].shape[0]):
                m = int(p["n_nodes"][t])
                trees.append({
                    "feature": p["features"][t, :m].tolist(),
                    "threshold": p["thresholds"][t, :m].tolist(),
                    "left": p["lefts"][t, :m].tolist(),
                    "right": p["rights"][t, :m].tolist(),
                    "counts": p["counts"][t, :m].tolist(),
                })
            doc["trees"] = trees
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "Model":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LearnerError(f"model document is not JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise LearnerError("not a model document")
        if doc.get("format") != _MODEL_FORMAT:
            raise LearnerError("not a model document")
        if doc.get("version") != _MODEL_VERSION:
            raise LearnerError(f"unsupported model document version {doc.get('version')!r}")
        config = LearnerConfig.from_dict(doc["config"])
        n_classes = int(doc["n_classes"])
        n_features = int(doc["n_features"])
        degen = doc["degenerate_class"]
        if degen is not None:
            return Model(config, n_classes, n_features, int(degen), None)
        if config.kind == "knn":
            payload = {
                "X": np.ascontiguousarray(doc["train_x"], dtype=np.float64),
                "y": np.asarray(doc["train_y"], dtype=np.int64),
            }
        elif config.kind == "gaussian_nb":
            payload = {
                "counts": np.asarray(doc["class_counts"], dtype=np.int64),
                "means": np.asarray(doc["means"], dtype=np.float64),
                "vars": np.asarray(doc["variances"], dtype=np.float64),
            }
        else:
            trees = doc["trees"]
            n_trees = len(trees)
            cap = max(len(t["feature"]) for t in trees)
            features = np.full((n_trees, cap), _kernels._LEAF, dtype=np.int64)
            thresholds = np.zeros((n_trees, cap))
            lefts = np.zeros((n_trees, cap), dtype=np.int64)
            rights = np.zeros((n_trees, cap), dtype=np.int64)
            counts = np.zeros((n_trees, cap, n_classes))
            n_nodes = np.empty(n_trees, dtype=np.int64)
            for t, tree in enumerate(trees):
                m = len(tree["feature"])
                n_nodes[t] = m
                features[t, :m] = tree["feature"]
                thresholds[t, :m] = tree["threshold"]
                lefts[t, :m] = tree["left"]
                rights[t, :m] = tree["right"]
                counts[t, :m] = tree["counts"]
            payload = {
                "features": features, "thresholds": thresholds,
                "lefts": lefts, "rights": rights,
                "counts": counts, "n_nodes": n_nodes,
            }
        return Model(config, n_classes, n_features, None, payload)


def _resolve_subsample(config: LearnerConfig, d: int) -> int:
    if config.feature_subsample is not None:
        return min(config.feature_subsample, d)
    return max(1, int(math.sqrt(d)))


def fit(config: LearnerConfig, X: np.ndarray, y: np.ndarray,
        n_classes: int | None = None) -> Model:
    """Train a model; deterministic for a given (config, data) pair.

    ``n_classes`` widens the label space beyond the classes present in
    ``y`` (posteriors for absent classes are 0). A single-class training
    set yields a degenerate model that always predicts that class.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise LearnerError("X must be a 2-d feature matrix")
    if y.shape != (X.shape[0],):
        raise LearnerError("y must be one label per row of X")
    if X.shape[0] == 0:
        raise LearnerError("empty training set")
    if (y < 0).any():
        raise LearnerError("labels must be nonnegative integers")
    observed = int(y.max()) + 1
    if n_classes is None:
        n_classes = max(observed, 2)
    elif n_classes < observed:
        raise LearnerError(f"n_classes={n_classes} but labels go up to {observed - 1}")
    n, d = X.shape

    present = np.unique(y)
    if present.size == 1:
        return Model(config, n_classes, d, int(present[0]), None)

    if config.kind == "knn":
        payload = {"X": X.copy(), "y": y.copy()}
    elif config.kind == "gaussian_nb":
        counts = np.bincount(y, minlength=n_classes)
        means = np.zeros((n_classes, d))
        varis = np.ones((n_classes, d))
        for c in present:
            Xc = X[y == c]
            means[c] = Xc.mean(axis=0)
            varis[c] = np.maximum(Xc.var(axis=0), _NB_VAR_FLOOR)
        payload = {"counts": counts, "means": means, "vars": varis}
    elif config.kind == "decision_tree":
        out = _kernels.fit_forest(X, y, n_classes, 1, config.max_depth,
                                  config.min_leaf, d, False, config.seed)
        payload = dict(zip(("features", "thresholds", "lefts", "rights", "counts", "n_nodes"), out))
    else:
        d_sub = _resolve_subsample(config, d)
        out = _kernels.fit_forest(X, y, n_classes, config.n_trees, config.max_depth,
                                  config.min_leaf, d_sub, True, config.seed)
        payload = dict(zip(("features", "thresholds", "lefts", "rights", "counts", "n_nodes"), out))
    return Model(config, n_classes, d, None, payload)


def predict_proba(model: Model, X: np.ndarray) -> np.ndarray:
    """Class posteriors for each row of ``X``; shape (n, n_classes)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise LearnerError("X must be a 2-d feature matrix")
    if X.shape[1] != model.n_features:
        raise LearnerError(
            f"feature dimension mismatch: model has {model.n_features}, input has {X.shape[1]}")
    n = X.shape[0]
    if model.degenerate:
        probs = np.zeros((n, model.n_classes))
        probs[:, model.degenerate_class] = 1.0
        return probs
    p = model._payload
    if model.kind == "knn":
        return _knn_proba(p["X"], p["y"], model.config.k, model.n_classes, X)
    if model.kind == "gaussian_nb":
        return _nb_proba(p["counts"], p["means"], p["vars"], X)
    probs = _kernels.forest_predict(p["features"], p["thresholds"], p["lefts"],
                                    p["rights"], p["counts"], X)
    return np.asarray(probs)


def predict(model: Model, x: np.ndarray) -> Prediction:
    """Single-instance convenience wrapper over :func:`predict_proba`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise LearnerError("x must be a single feature vector")
    probs = predict_proba(model, x[None, :])[0]
    return Prediction.from_probs(probs)


def _knn_proba(Xt, yt, k, n_classes, Xq):
    # squared euclidean ranks the same as euclidean; stable argsort makes
    # distance ties fall to the lower training index
    k = min(k, Xt.shape[0])
    t2 = (Xt * Xt).sum(axis=1)
    q2 = (Xq * Xq).sum(axis=1)
    d2 = q2[:, None] + t2[None, :] - 2.0 * (Xq @ Xt.T)
    np.maximum(d2, 0.0, out=d2)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = yt[idx]
    return (votes[:, :, None] == np.arange(n_classes)[None, None, :]).mean(axis=1)


def _nb_proba(counts, means, varis, Xq):
    n = counts.sum()
    with np.errstate(divide="ignore"):
        log_prior = np.log(counts / n)  # absent class -> -inf -> posterior 0
    const = -0.5 * np.log(2.0 * np.pi * varis).sum(axis=1)
    diff = Xq[:, None, :] - means[None, :, :]
    quad = -0.5 * ((diff * diff) / varis[None, :, :]).sum(axis=2)
    joint = log_prior[None, :] + const[None, :] + quad
    joint -= joint.max(axis=1, keepdims=True)
    probs = np.exp(joint)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs
