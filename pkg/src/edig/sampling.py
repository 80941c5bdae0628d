"""Query strategies for pool-based batch active learning.

Scoring combines three ingredients per unlabeled candidate u against the
labeled set L:

* diversity: 1 - max_l proximity(u, l), where proximity = 1/(1 + cosine
  distance); 1 when L is empty,
* uncertainty: least-confident, margin, or entropy of the current model's
  posterior (all transformed so larger means more uncertain),
* a rater-confidence term: 1/(1 + min_l [distance(u,l) * beta/(beta +
  confidence_l)]); 0 when L is empty.

The ranked-batch score is alpha*diversity + (1-alpha)*uncertainty with
alpha = |U|/(|U|+|L|); the confidence-weighted score adds the confidence
term on top, unscaled. Batch selection clusters the candidate pool into
batch_size groups and takes one argmax per group, feeding each pick back
into the diversity reference so later picks avoid it.

All tie-breaks are by instance id ascending; candidate order is always
the id-sorted unlabeled pool, so selection is deterministic for a given
pool, model, and RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry, learners
from .data import DataError, Dataset, LabeledExample

STRATEGIES = ("rbm", "edig", "top_positive_mix", "uncertainty_only", "random")
UNCERTAINTY_MEASURES = ("least_confident", "margin", "entropy")

# candidate pools larger than this are uniformly subsampled before scoring
# to keep per-round latency flat
CANDIDATE_CAP = 2000


class SamplingError(ValueError):
    """Invalid sampler configuration or pool state."""


@dataclass(frozen=True, eq=False)
class PoolState:
    """Snapshot of the labeled/unlabeled split of one training pool.

    ``labeled`` and ``unlabeled_ids`` partition the pool; both refer into
    ``dataset`` by instance id. ``round`` counts completed labeling rounds.
    """

    dataset: Dataset
    labeled: tuple
    unlabeled_ids: tuple
    round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labeled", tuple(self.labeled))
        object.__setattr__(self, "unlabeled_ids", tuple(str(i) for i in self.unlabeled_ids))
        lab = [ex.instance_id for ex in self.labeled]
        lab_set = set(lab)
        unl_set = set(self.unlabeled_ids)
        if len(lab) != len(lab_set):
            raise SamplingError("duplicate labeled instance ids")
        if len(self.unlabeled_ids) != len(unl_set):
            raise SamplingError("duplicate unlabeled instance ids")
        if lab_set & unl_set:
            raise SamplingError("labeled and unlabeled sets overlap")
        for i in lab_set | unl_set:
            try:
                self.dataset.index_of(i)
            except DataError as exc:
                raise SamplingError(str(exc)) from None
        if self.round < 0:
            raise SamplingError("round must be >= 0")

    @property
    def labeled_ids(self) -> tuple:
        return tuple(ex.instance_id for ex in self.labeled)

    def labeled_features(self) -> np.ndarray:
        return self.dataset.features_of(self.labeled_ids)

    def labeled_labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.labeled], dtype=np.int64)

    def labeled_confidences(self) -> np.ndarray:
        return np.array([ex.confidence for ex in self.labeled], dtype=np.float64)

    def with_new_labels(self, examples) -> "PoolState":
        """Move newly labeled instances from U to L and advance the round."""
        examples = tuple(examples)
        new_ids = {ex.instance_id for ex in examples}
        if len(new_ids) != len(examples):
            raise SamplingError("duplicate ids in new labels")
        missing = new_ids - set(self.unlabeled_ids)
        if missing:
            raise SamplingError(f"ids not in unlabeled pool: {sorted(missing)}")
        remaining = tuple(i for i in self.unlabeled_ids if i not in new_ids)
        return PoolState(self.dataset, self.labeled + examples, remaining, self.round + 1)


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-candidate score with its additive parts.

    ``total`` must equal alpha*diversity_term + (1-alpha)*uncertainty_term
    + confidence_term; the ranked-batch strategy simply has a zero
    confidence_term.
    """

    instance_id: str
    alpha: float
    diversity_term: float
    uncertainty_term: float
    confidence_term: float
    total: float

    def __post_init__(self):
        recomposed = (self.alpha * self.diversity_term
                      + (1.0 - self.alpha) * self.uncertainty_term
                      + self.confidence_term)
        if not math.isclose(recomposed, self.total, rel_tol=0.0, abs_tol=1e-12):
            raise SamplingError(
                f"score total {self.total} does not recompose from its terms ({recomposed})")


@dataclass(frozen=True)
class SamplerConfig:
    """Strategy selection plus the knobs each strategy reads."""

    strategy: str = "edig"
    beta: float = 0.5
    uncertainty_measure: str = "least_confident"
    batch_size: int = 5
    mix: tuple = (14, 3, 3)
    positive_class: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SamplingError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.uncertainty_measure not in UNCERTAINTY_MEASURES:
            raise SamplingError(f"unknown uncertainty measure {self.uncertainty_measure!r}")
        if self.beta <= 0.0:
            raise SamplingError("beta must be > 0")
        if self.batch_size < 1:
            raise SamplingError("batch_size must be >= 1")
        mix = tuple(int(m) for m in self.mix)
        object.__setattr__(self, "mix", mix)
        if len(mix) != 3 or any(m < 0 for m in mix):
            raise SamplingError("mix must be three nonnegative counts")
        if self.strategy == "top_positive_mix" and sum(mix) != self.batch_size:
            raise SamplingError(
                f"mix {mix} must sum to batch_size {self.batch_size}")
        if self.positive_class < 0:
            raise SamplingError("positive_class must be >= 0")


def uncertainty_from_probs(probs: np.ndarray, measure: str) -> np.ndarray:
    """Vectorized uncertainty over rows of a posterior matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise SamplingError("probs must be a 2-d matrix of class posteriors")
    if measure == "least_confident":
        return 1.0 - probs.max(axis=1)
    if measure == "margin":
        part = np.partition(probs, probs.shape[1] - 2, axis=1)
        return 1.0 - (part[:, -1] - part[:, -2])
    if measure == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
        return -terms.sum(axis=1)
    raise SamplingError(f"unknown uncertainty measure {measure!r}")


def uncertainty(prediction: learners.Prediction, measure: str = "least_confident") -> float:
    """Uncertainty of one prediction; larger means less certain."""
    return float(uncertainty_from_probs(prediction.class_probs[None, :], measure)[0])


def alpha_schedule(pool: PoolState) -> float:
    """Pool-ratio weight |U|/(|U|+|L|): 1 before any labels, 0 at exhaustion."""
    n_u = len(pool.unlabeled_ids)
    n_l = len(pool.labeled)
    if n_u + n_l == 0:
        raise SamplingError("empty pool")
    return n_u / (n_u + n_l)


def diversity_term(u_X: np.ndarray, labeled_X: np.ndarray) -> np.ndarray:
    """1 - proximity to the nearest labeled point; 1 when nothing is labeled.

    ``u_X`` may be a single vector or a matrix of candidates; the result
    matches (scalar array of shape () is avoided: a vector in gives a
    0-d-free float out via the caller indexing).
    """
    u_X = np.asarray(u_X, dtype=np.float64)
    single = u_X.ndim == 1
    if single:
        u_X = u_X[None, :]
    labeled_X = np.asarray(labeled_X, dtype=np.float64)
    if labeled_X.size == 0:
        out = np.ones(u_X.shape[0])
    else:
        d_min = geometry.cross_distances(u_X, labeled_X).min(axis=1)
        out = 1.0 - 1.0 / (1.0 + d_min)
    return float(out[0]) if single else out


def confidence_term(u_X: np.ndarray, labeled_X: np.ndarray,
                    labeled_conf: np.ndarray, beta: float) -> np.ndarray:
    """1/(1 + min over labeled of distance*beta/(beta+confidence)).

    High-confidence labels shrink their weighted distance, pulling the term
    toward 1 for candidates near them. Empty labeled set gives 0 (inactive).
    """
    if beta <= 0.0:
        raise SamplingError("beta must be > 0")
    u_X = np.asarray(u_X, dtype=np.float64)
    single = u_X.ndim == 1
    if single:
        u_X = u_X[None, :]
    labeled_X = np.asarray(labeled_X, dtype=np.float64)
    labeled_conf = np.asarray(labeled_conf, dtype=np.float64)
    if labeled_X.size == 0:
        out = np.zeros(u_X.shape[0])
    else:
        if (labeled_conf < 0.0).any() or (labeled_conf > 1.0).any():
            raise SamplingError("labeled confidences must lie in [0, 1]")
        D = geometry.cross_distances(u_X, labeled_X)
        weights = beta / (beta + labeled_conf)
        out = 1.0 / (1.0 + (D * weights[None, :]).min(axis=1))
    return float(out[0]) if single else out


def _resolve_features(pool: PoolState, u) -> tuple:
    if hasattr(u, "instance_id"):
        iid = u.instance_id
    else:
        iid = str(u)
    return iid, pool.dataset.X[pool.dataset.index_of(iid)]


def _uncertainty_of(pool, model, x, measure) -> float:
    if model is None:
        if len(pool.labeled) > 0:
            raise SamplingError("a fitted model is required once labels exist")
        return 0.0
    probs = learners.predict_proba(model, x[None, :])
    return float(uncertainty_from_probs(probs, measure)[0])


def score_rbm(u, pool: PoolState, model, measure: str = "least_confident") -> ScoreBreakdown:
    """Ranked-batch score of one candidate: alpha*diversity + (1-alpha)*uncertainty."""
    iid, x = _resolve_features(pool, u)
    alpha = alpha_schedule(pool)
    div = diversity_term(x, pool.labeled_features())
    unc = _uncertainty_of(pool, model, x, measure)
    total = alpha * div + (1.0 - alpha) * unc + 0.0
    return ScoreBreakdown(iid, alpha, div, unc, 0.0, total)


def score_edig(u, pool: PoolState, model, beta: float = 0.5,
               measure: str = "least_confident") -> ScoreBreakdown:
    """Ranked-batch score plus the confidence term (unscaled by alpha)."""
    iid, x = _resolve_features(pool, u)
    alpha = alpha_schedule(pool)
    L_X = pool.labeled_features()
    div = diversity_term(x, L_X)
    unc = _uncertainty_of(pool, model, x, measure)
    conf = confidence_term(x, L_X, pool.labeled_confidences(), beta)
    total = alpha * div + (1.0 - alpha) * unc + conf
    return ScoreBreakdown(iid, alpha, div, unc, conf, total)


def _candidate_arrays(pool: PoolState, config: SamplerConfig, rng, need: int):
    cand_ids = sorted(pool.unlabeled_ids)
    if len(cand_ids) < need:
        raise SamplingError(
            f"need {need} unlabeled instances, pool has {len(cand_ids)}")
    if len(cand_ids) > CANDIDATE_CAP:
        keep = rng.choice(len(cand_ids), size=CANDIDATE_CAP, replace=False)
        keep.sort()
        cand_ids = [cand_ids[i] for i in keep]
    idx = np.array([pool.dataset.index_of(i) for i in cand_ids], dtype=np.int64)
    Xc = np.ascontiguousarray(pool.dataset.X[idx])
    return cand_ids, Xc


def _pool_probs(pool, model, Xc):
    if model is None:
        if len(pool.labeled) > 0:
            raise SamplingError("a fitted model is required once labels exist")
        return None
    return learners.predict_proba(model, Xc)


def _cluster_filtered(pool, model, config, rng) -> list:
    cand_ids, Xc = _candidate_arrays(pool, config, rng, config.batch_size)
    n = len(cand_ids)
    alpha = alpha_schedule(pool)
    probs = _pool_probs(pool, model, Xc)
    unc = (np.zeros(n) if probs is None
           else uncertainty_from_probs(probs, config.uncertainty_measure))
    L_X = pool.labeled_features()
    if L_X.size:
        d_min = geometry.cross_distances(Xc, L_X).min(axis=1)
    else:
        d_min = np.full(n, np.inf)
    if config.strategy == "edig":
        conf = confidence_term(Xc, L_X, pool.labeled_confidences(), config.beta)
        conf = np.atleast_1d(np.asarray(conf, dtype=np.float64))
    else:
        conf = np.zeros(n)

    div0 = 1.0 - 1.0 / (1.0 + d_min)
    total0 = alpha * div0 + (1.0 - alpha) * unc + conf
    clusters = geometry.agglomerative_clusters(Xc, config.batch_size)

    # visit clusters best-first so strong clusters pick before the diversity
    # reference fills in around them
    order = []
    for c in range(config.batch_size):
        members = np.nonzero(clusters == c)[0]
        best = members[int(np.argmax(total0[members]))]
        order.append((-float(total0[best]), int(best), int(c)))
    order.sort()

    out = []
    for _, _, c in order:
        members = np.nonzero(clusters == c)[0]
        div = 1.0 - 1.0 / (1.0 + d_min[members])
        tot = alpha * div + (1.0 - alpha) * unc[members] + conf[members]
        j = int(np.argmax(tot))
        gi = int(members[j])
        out.append(ScoreBreakdown(cand_ids[gi], alpha, float(div[j]),
                                  float(unc[gi]), float(conf[gi]), float(tot[j])))
        # the pick joins the diversity reference for clusters not yet visited
        d_new = geometry.cross_distances(Xc, Xc[gi:gi + 1])[:, 0]
        np.minimum(d_min, d_new, out=d_min)
    out.sort(key=lambda b: (-b.total, b.instance_id))
    return out


def _uncertainty_only(pool, model, config, rng) -> list:
    cand_ids, Xc = _candidate_arrays(pool, config, rng, config.batch_size)
    if model is None:
        raise SamplingError("uncertainty_only requires a fitted model")
    alpha = alpha_schedule(pool)
    probs = learners.predict_proba(model, Xc)
    unc = uncertainty_from_probs(probs, config.uncertainty_measure)
    order = np.argsort(-unc, kind="stable")[:config.batch_size]
    return [ScoreBreakdown(cand_ids[i], alpha, 0.0, float(unc[i]), 0.0,
                           (1.0 - alpha) * float(unc[i]))
            for i in order]


def _random_batch(pool, config, rng) -> list:
    cand_ids = sorted(pool.unlabeled_ids)
    if len(cand_ids) < config.batch_size:
        raise SamplingError(
            f"need {config.batch_size} unlabeled instances, pool has {len(cand_ids)}")
    alpha = alpha_schedule(pool)
    pick = rng.choice(len(cand_ids), size=config.batch_size, replace=False)
    return [ScoreBreakdown(cand_ids[i], alpha, 0.0, 0.0, 0.0, 0.0) for i in pick]


def select_batch_detailed(pool: PoolState, model, config: SamplerConfig,
                          rng: np.random.Generator | None = None) -> list:
    """Like :func:`select_batch` but returns full ScoreBreakdowns."""
    if rng is None:
        rng = np.random.default_rng(0)
    if config.strategy in ("rbm", "edig"):
        return _cluster_filtered(pool, model, config, rng)
    if config.strategy == "uncertainty_only":
        return _uncertainty_only(pool, model, config, rng)
    if config.strategy == "random":
        return _random_batch(pool, config, rng)
    return select_top_positive_mix_detailed(pool, model, config, rng)


def select_batch(pool: PoolState, model, config: SamplerConfig,
                 rng: np.random.Generator | None = None) -> list:
    """Choose the next query batch; returns instance ids in report order.

    For the scored strategies the candidates are clustered into
    batch_size groups and each group contributes its argmax, so no two
    picks share a cluster; ids come back sorted by descending score.
    """
    return [b.instance_id for b in select_batch_detailed(pool, model, config, rng)]


def select_top_positive_mix_detailed(pool: PoolState, model, config: SamplerConfig,
                                     rng: np.random.Generator | None = None) -> list:
    """Mixed batch: likely-positive block, least-confident block, random block."""
    if rng is None:
        rng = np.random.default_rng(0)
    n_top, n_unc, n_rand = config.mix
    need = n_top + n_unc + n_rand
    cand_ids, Xc = _candidate_arrays(pool, config, rng, need)
    if model is None:
        raise SamplingError("top_positive_mix requires a fitted model")
    if config.positive_class >= model.n_classes:
        raise SamplingError(
            f"positive_class {config.positive_class} out of range for {model.n_classes} classes")
    alpha = alpha_schedule(pool)
    probs = learners.predict_proba(model, Xc)
    pos = probs[:, config.positive_class]
    unc = uncertainty_from_probs(probs, "least_confident")

    n = len(cand_ids)
    taken = np.zeros(n, dtype=bool)
    chosen = []
    for i in np.argsort(-pos, kind="stable"):
        if len(chosen) == n_top:
            break
        chosen.append(int(i))
        taken[i] = True
    block2 = 0
    for i in np.argsort(-unc, kind="stable"):
        if block2 == n_unc:
            break
        if not taken[i]:
            chosen.append(int(i))
            taken[i] = True
            block2 += 1
    rest = np.nonzero(~taken)[0]
    if n_rand:
        for i in rng.choice(len(rest), size=n_rand, replace=False):
            chosen.append(int(rest[i]))
    return [ScoreBreakdown(cand_ids[i], alpha, 0.0, float(unc[i]), 0.0,
                           (1.0 - alpha) * float(unc[i]))
            for i in chosen]


def select_top_positive_mix(pool: PoolState, model, config: SamplerConfig,
                            rng: np.random.Generator | None = None) -> list:
    return [b.instance_id for b in
            select_top_positive_mix_detailed(pool, model, config, rng)]


def scores_to_csv(breakdowns) -> str:
    """Fixed 6-decimal CSV of score breakdowns, one row per candidate."""
    lines = ["instance_id,alpha,diversity,uncertainty,confidence,total"]
    for b in breakdowns:
        lines.append(f"{b.instance_id},{b.alpha:.6f},{b.diversity_term:.6f},"
                     f"{b.uncertainty_term:.6f},{b.confidence_term:.6f},{b.total:.6f}")
    return "\n".join(lines) + "\n"
