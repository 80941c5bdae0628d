"""Label providers that close the active-learning loop.

Four oracles, all answering "what label and how confident" for a batch of
instance ids against a :class:`~edig.sampling.PoolState`:

* ground truth: the stored label with confidence 1,
* simulated confidence: a companion model stands in for the expert; its
  top posterior is clamped to a plausible band, jittered, and its label
  errs more often when that confidence is low,
* noisy: flips the truth with a fixed probability and reports confidence
  drawn independently of correctness (an uncalibrated rater),
* deferred: a rendezvous object filled in by human submissions through
  the session service.

Immediate oracles derive their randomness from (seed, round), so replaying
a round reproduces its responses exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import learners
from .data import confidence_to_unit
from .sampling import PoolState


class OracleError(ValueError):
    """Invalid oracle input or out-of-protocol submission."""


@dataclass(frozen=True)
class OracleResponse:
    """One answered query; ``latency_rounds`` is 0 for immediate oracles."""

    instance_id: str
    label: int
    confidence: float
    latency_rounds: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise OracleError(f"confidence {self.confidence} outside [0, 1]")
        if self.label < 0:
            raise OracleError("label must be nonnegative")


def _truth_of(pool: PoolState, instance_id: str) -> int:
    t = int(pool.dataset.truths[pool.dataset.index_of(instance_id)])
    if t < 0:
        raise OracleError(f"instance {instance_id} has no ground truth")
    return t


class GroundTruthOracle:
    """Answers with the stored label at full confidence."""

    source = "ground_truth"

    def respond(self, pool: PoolState, instance_ids) -> list:
        return [OracleResponse(i, _truth_of(pool, i), 1.0) for i in instance_ids]


@dataclass(frozen=True)
class SimOracleConfig:
    """Knobs for the simulated-confidence oracle.

    Raw companion confidence is clamped into [clamp_lo, clamp_hi], then
    uniform noise of +/- noise_halfwidth is added, then a final [0, 1]
    clamp. The reported label is the truth flipped with a probability that
    falls linearly from ``error_rate_at_min_confidence`` (at the low clamp)
    to 0 (at the high clamp), so confidence and correctness correlate.
    """

    clamp_lo: float = 0.3
    clamp_hi: float = 0.8
    noise_halfwidth: float = 0.2
    companion_learner: learners.LearnerConfig = field(
        default_factory=lambda: learners.LearnerConfig(kind="knn", k=5))
    error_rate_at_min_confidence: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.clamp_lo < self.clamp_hi <= 1.0:
            raise OracleError("need 0 <= clamp_lo < clamp_hi <= 1")
        if self.noise_halfwidth < 0.0:
            raise OracleError("noise_halfwidth must be >= 0")
        if not 0.0 <= self.error_rate_at_min_confidence <= 0.5:
            raise OracleError("error_rate_at_min_confidence must lie in [0, 0.5]")


class SimulatedConfidenceOracle:
    """Expert stand-in whose confidence tracks a companion model.

    From round 1 on, the companion is fit to the currently labeled pool
    (with the labels as given, errors included) and its top posterior at
    each queried instance is the raw confidence. Round 0 has no companion
    yet and uses the clamp-band midpoint. Per-instance draws happen in
    batch order: noise first, then the error flip.
    """

    source = "simulated"

    def __init__(self, config: SimOracleConfig):
        self.config = config

    def respond(self, pool: PoolState, instance_ids) -> list:
        cfg = self.config
        instance_ids = list(instance_ids)
        rng = np.random.default_rng([cfg.seed, pool.round])
        if pool.round >= 1 and len(pool.labeled) > 0:
            model = learners.fit(cfg.companion_learner, pool.labeled_features(),
                                 pool.labeled_labels(), pool.dataset.n_classes)
            X = pool.dataset.features_of(instance_ids)
            raw = learners.predict_proba(model, X).max(axis=1)
        else:
            raw = np.full(len(instance_ids), (cfg.clamp_lo + cfg.clamp_hi) / 2.0)
        out = []
        span = cfg.clamp_hi - cfg.clamp_lo
        n_classes = pool.dataset.n_classes
        for i, iid in enumerate(instance_ids):
            truth = _truth_of(pool, iid)
            clamped = min(max(float(raw[i]), cfg.clamp_lo), cfg.clamp_hi)
            noise = rng.uniform(-cfg.noise_halfwidth, cfg.noise_halfwidth)
            conf = min(max(clamped + noise, 0.0), 1.0)
            p_err = cfg.error_rate_at_min_confidence * (cfg.clamp_hi - clamped) / span
            label = truth
            if rng.random() < p_err:
                others = [c for c in range(n_classes) if c != truth]
                label = others[rng.integers(len(others))]
            out.append(OracleResponse(iid, label, conf))
        return out


class NoisyOracle:
    """Flips the truth with fixed probability; confidence is uninformative.

    ``confidence_dist`` is ("constant", v), ("uniform", lo, hi), or
    ("beta", a, b); draws are independent of whether the label is correct.
    """

    source = "simulated"

    def __init__(self, flip_prob: float, confidence_dist=("uniform", 0.0, 1.0),
                 seed: int = 0):
        if not 0.0 <= flip_prob <= 1.0:
            raise OracleError("flip_prob must lie in [0, 1]")
        self.flip_prob = flip_prob
        self.confidence_dist = tuple(confidence_dist)
        self.seed = seed
        self._draw = self._make_draw(self.confidence_dist)

    @staticmethod
    def _make_draw(dist):
        kind = dist[0]
        if kind == "constant":
            v = float(dist[1])
            if not 0.0 <= v <= 1.0:
                raise OracleError("constant confidence must lie in [0, 1]")
            return lambda rng: v
        if kind == "uniform":
            lo, hi = float(dist[1]), float(dist[2])
            if not 0.0 <= lo <= hi <= 1.0:
                raise OracleError("uniform confidence bounds must satisfy 0 <= lo <= hi <= 1")
            return lambda rng: float(rng.uniform(lo, hi))
        if kind == "beta":
            a, b = float(dist[1]), float(dist[2])
            return lambda rng: float(rng.beta(a, b))
        raise OracleError(f"unknown confidence distribution {kind!r}")

    def respond(self, pool: PoolState, instance_ids) -> list:
        rng = np.random.default_rng([self.seed, pool.round])
        out = []
        n_classes = pool.dataset.n_classes
        for iid in instance_ids:
            truth = _truth_of(pool, iid)
            conf = self._draw(rng)
            label = truth
            if rng.random() < self.flip_prob:
                others = [c for c in range(n_classes) if c != truth]
                label = others[rng.integers(len(others))]
            out.append(OracleResponse(iid, label, conf))
        return out


def build_oracle(spec: dict):
    """Construct an oracle from a plain config mapping.

    ``spec["kind"]`` picks the class: ground_truth, simulated, noisy, or
    deferred; remaining keys are that oracle's constructor arguments
    (``companion_learner`` may itself be a mapping).
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "ground_truth":
        if spec:
            raise OracleError(f"unexpected ground_truth oracle options: {sorted(spec)}")
        return GroundTruthOracle()
    if kind == "simulated":
        comp = spec.get("companion_learner")
        if isinstance(comp, dict):
            spec["companion_learner"] = learners.LearnerConfig.from_dict(comp)
        try:
            return SimulatedConfidenceOracle(SimOracleConfig(**spec))
        except TypeError as e:
            raise OracleError(f"bad simulated oracle options: {e}") from None
    if kind == "noisy":
        try:
            return NoisyOracle(**spec)
        except TypeError as e:
            raise OracleError(f"bad noisy oracle options: {e}") from None
    if kind == "deferred":
        try:
            return DeferredOracle(**spec)
        except TypeError as e:
            raise OracleError(f"bad deferred oracle options: {e}") from None
    raise OracleError(f"unknown oracle kind {kind!r}")


class DeferredOracle:
    """Collects human answers for one batch at a time.

    The session service opens a batch, forwards submissions (integer
    confidence 0..10, mapped to [0, 1]), and reads the responses back once
    every instance has exactly one answer. Resubmitting an instance is
    rejected; the first answer stands.
    """

    source = "human"

    def __init__(self, n_classes: int = 2):
        self.n_classes = n_classes
        self._batch: list | None = None
        self._answers: dict = {}

    def begin_batch(self, instance_ids) -> None:
        if self._batch is not None and not self.is_complete():
            raise OracleError("previous batch still has pending instances")
        instance_ids = [str(i) for i in instance_ids]
        if len(set(instance_ids)) != len(instance_ids):
            raise OracleError("duplicate ids in batch")
        self._batch = instance_ids
        self._answers = {}

    def submit(self, instance_id: str, label: int, confidence_0_10: int) -> OracleResponse:
        if self._batch is None:
            raise OracleError("no open batch")
        if instance_id not in self._batch:
            raise OracleError(f"instance {instance_id} is not in the open batch")
        if instance_id in self._answers:
            raise OracleError(f"instance {instance_id} already answered")
        if not 0 <= label < self.n_classes:
            raise OracleError(f"label {label} out of range for {self.n_classes} classes")
        try:
            conf = confidence_to_unit(confidence_0_10)
        except ValueError as exc:
            raise OracleError(str(exc)) from None
        resp = OracleResponse(instance_id, label, conf)
        self._answers[instance_id] = resp
        return resp

    def pending_ids(self) -> tuple:
        if self._batch is None:
            return ()
        return tuple(i for i in self._batch if i not in self._answers)

    def is_complete(self) -> bool:
        return self._batch is not None and not self.pending_ids()

    def responses(self) -> list:
        if self._batch is None:
            raise OracleError("no open batch")
        if not self.is_complete():
            raise OracleError(f"batch still pending: {self.pending_ids()}")
        return [self._answers[i] for i in self._batch]
