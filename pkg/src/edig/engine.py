"""The active-learning loop and the multi-split experiment runner.

One round is: select a batch, ask the oracle, fold the answers into the
labeled pool, refit the learner, and score the held-out test split. The
experiment runner repeats that over several train/test splits and over
several sampler "arms", pairing arms on identical splits, seed labels,
and oracle seeds so arm differences are attributable to sampling alone.

Budget counts oracle-queried labels; the initial seed labels are free.
All randomness is derived from (experiment seed, split, round, purpose)
streams, so a rerun reproduces the result table byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernels, learners, sampling, stats
from .data import Dataset, LabeledExample, SplitSpec, split, standardize
from .oracles import build_oracle
from .sampling import PoolState, SamplerConfig

STOP_KINDS = ("max_labels", "min_mean_confidence", "manual")

# purpose codes for derived RNG streams
_PURPOSE_SEED_LABELS = 0
_PURPOSE_SAMPLER = 1
_PURPOSE_ORACLE = 2

CONFIDENCE_STOP_WINDOW = 2


class EngineError(ValueError):
    """Invalid experiment configuration or exhausted pool."""


@dataclass(frozen=True)
class StoppingRule:
    kind: str
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise EngineError(f"unknown stopping rule {self.kind!r}")
        if self.kind == "max_labels" and self.threshold < 1:
            raise EngineError("max_labels threshold must be >= 1")
        if self.kind == "min_mean_confidence" and not 0.0 <= self.threshold <= 1.0:
            raise EngineError("min_mean_confidence threshold must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; ``oracle`` is a spec mapping for
    :func:`edig.oracles.build_oracle`."""

    sampler: SamplerConfig
    learner: learners.LearnerConfig
    oracle: dict
    split: SplitSpec
    budget: int
    batch_size: int | None = None
    n_seed: int = 10
    stop: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.batch_size is None:
            object.__setattr__(self, "batch_size", self.sampler.batch_size)
        elif self.batch_size != self.sampler.batch_size:
            raise EngineError(
                f"batch_size {self.batch_size} disagrees with sampler batch_size "
                f"{self.sampler.batch_size}")
        if self.budget < self.batch_size:
            raise EngineError("budget must be at least one batch")
        if self.n_seed < 0:
            raise EngineError("n_seed must be >= 0")
        object.__setattr__(self, "stop", tuple(self.stop))
        for rule in self.stop:
            if not isinstance(rule, StoppingRule):
                raise EngineError("stop entries must be StoppingRules")
        build_oracle(self.oracle)  # validate the spec eagerly


@dataclass(frozen=True)
class RoundRecord:
    round: int
    queried_ids: tuple
    responses: tuple
    metrics: dict
    alpha: float
    mean_weighted_uncertainty: float

    def __post_init__(self):
        if len(self.queried_ids) != len(self.responses):
            raise EngineError("one response per queried id required")


@dataclass(frozen=True)
class LoopState:
    """Pool plus the model fitted to it; replaced wholesale each round."""

    pool: PoolState
    model: object


@dataclass(frozen=True)
class RunContext:
    """Per-(arm, split) constants threaded through run_round."""

    config: ExperimentConfig
    sampler: SamplerConfig
    split_index: int
    oracle: object
    test_X: np.ndarray
    test_y: np.ndarray


def derive_rng(seed: int, split_index: int, round_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, split_index, round_index, purpose])


def derive_oracle_seed(base: int, seed: int, split_index: int) -> int:
    """Stable per-split oracle seed shared by every arm of that split."""
    return int(np.random.SeedSequence([base, seed, split_index, _PURPOSE_ORACLE])
               .generate_state(1)[0])


def seed_initial_labels(dataset: Dataset, n_seed: int, oracle, rng,
                        policy: str = "stratified") -> PoolState:
    """Label a starting subset so the first model has something to fit.

    ``stratified`` draws proportionally from each ground-truth class
    (every class gets at least one pick when n_seed allows); ``random``
    draws uniformly. The oracle answers at round 0.
    """
    n = len(dataset)
    if n_seed > n:
        raise EngineError(f"n_seed {n_seed} exceeds pool size {n}")
    all_ids = sorted(dataset.ids)
    pool0 = PoolState(dataset, (), tuple(all_ids), 0)
    if n_seed == 0:
        return pool0
    if policy == "stratified":
        truths = np.array([dataset.truths[dataset.index_of(i)] for i in all_ids])
        if (truths < 0).any():
            raise EngineError("stratified seeding requires ground truth on every instance")
        classes = np.unique(truths)
        # largest-remainder apportionment, then force >= 1 per class if room
        fracs = np.array([np.sum(truths == c) / n for c in classes])
        counts = np.floor(fracs * n_seed).astype(int)
        rem = fracs * n_seed - counts
        for i in np.argsort(-rem, kind="stable")[: n_seed - counts.sum()]:
            counts[i] += 1
        if n_seed >= classes.size:
            while (counts == 0).any():
                counts[int(np.argmax(counts == 0))] += 1
                counts[int(np.argmax(counts))] -= 1
        chosen = []
        for c, k in zip(classes, counts):
            members = [i for i, t in zip(all_ids, truths) if t == c]
            pick = rng.choice(len(members), size=min(k, len(members)), replace=False)
            chosen.extend(members[j] for j in pick)
    elif policy == "random":
        pick = rng.choice(n, size=n_seed, replace=False)
        chosen = [all_ids[j] for j in pick]
    else:
        raise EngineError(f"unknown seeding policy {policy!r}")
    chosen = sorted(chosen)
    chosen_set = set(chosen)
    responses = oracle.respond(pool0, chosen)
    labeled = tuple(LabeledExample(r.instance_id, r.label, r.confidence,
                                   oracle.source, 0) for r in responses)
    rest = tuple(i for i in all_ids if i not in chosen_set)
    return PoolState(dataset, labeled, rest, 0)


def evaluate_stopping(pool: PoolState, records, rules, n_seed: int,
                      manual_stop: bool = False) -> str | None:
    """Name of the first triggered rule, or None to continue.

    max_labels compares the queried count (labels beyond the seed set);
    min_mean_confidence averages the last two rounds' mean confidence
    (one round suffices when only one exists).
    """
    for rule in rules:
        if rule.kind == "manual":
            if manual_stop:
                return "manual"
        elif rule.kind == "max_labels":
            if len(pool.labeled) - n_seed >= rule.threshold:
                return "max_labels"
        elif rule.kind == "min_mean_confidence":
            if records:
                window = records[-CONFIDENCE_STOP_WINDOW:]
                mean_conf = float(np.mean([r.metrics["mean_confidence"] for r in window]))
                if mean_conf < rule.threshold:
                    return "min_mean_confidence"
    return None


def test_metrics(model, test_X, test_y, positive_class):
    probs = learners.predict_proba(model, test_X)
    preds = np.argmax(probs, axis=1)
    f1, precision, recall = stats.f1_precision_recall(preds, test_y, positive_class)
    try:
        area = stats.auprc(probs[:, positive_class], test_y, positive_class)
    except stats.StatsError:
        area = 0.0  # test split without positives
    return {"f1": f1, "precision": precision, "recall": recall, "auprc": area}


def run_round(state: LoopState, ctx: RunContext) -> tuple:
    """One query/label/refit/evaluate cycle; a failure leaves state unused."""
    pool = state.pool
    if len(pool.unlabeled_ids) < ctx.sampler.batch_size:
        raise EngineError(
            f"pool exhausted: {len(pool.unlabeled_ids)} unlabeled, "
            f"batch is {ctx.sampler.batch_size}")
    rng = derive_rng(ctx.config.seed, ctx.split_index, pool.round, _PURPOSE_SAMPLER)
    breakdowns = sampling.select_batch_detailed(pool, state.model, ctx.sampler, rng)
    ids = [b.instance_id for b in breakdowns]
    responses = ctx.oracle.respond(pool, ids)
    examples = [LabeledExample(r.instance_id, r.label, r.confidence,
                               ctx.oracle.source, pool.round)
                for r in responses]
    pool2 = pool.with_new_labels(examples)
    model2 = learners.fit(ctx.config.learner, pool2.labeled_features(),
                          pool2.labeled_labels(), pool.dataset.n_classes)
    metrics = test_metrics(model2, ctx.test_X, ctx.test_y, ctx.sampler.positive_class)
    metrics["mean_confidence"] = float(np.mean([r.confidence for r in responses]))
    truths = [int(pool.dataset.truths[pool.dataset.index_of(i)]) for i in ids]
    if all(t >= 0 for t in truths):
        metrics["correct_label_count"] = int(
            sum(r.label == t for r, t in zip(responses, truths)))
    alpha = breakdowns[0].alpha
    mwu = float(np.mean([(1.0 - b.alpha) * b.uncertainty_term for b in breakdowns]))
    record = RoundRecord(pool.round, tuple(ids), tuple(responses), metrics, alpha, mwu)
    return LoopState(pool2, model2), record


def run_split(config: ExperimentConfig, sampler: SamplerConfig, split_index: int,
              dataset: Dataset) -> list:
    """All rounds of one (arm, split) run; returns its RoundRecords."""
    train_raw, test_raw = split(dataset, config.split, split_index)
    train_ds, scaler = standardize(train_raw)
    test_X = scaler.apply_matrix(test_raw.X)
    test_y = np.asarray(test_raw.truths)
    if (test_y < 0).any():
        raise EngineError("test split requires ground truth for evaluation")

    oracle_spec = dict(config.oracle)
    if oracle_spec.get("kind") in ("simulated", "noisy"):
        base = int(oracle_spec.get("seed", 0))
        oracle_spec["seed"] = derive_oracle_seed(base, config.seed, split_index)
    oracle = build_oracle(oracle_spec)

    seed_rng = derive_rng(config.seed, split_index, 0, _PURPOSE_SEED_LABELS)
    pool = seed_initial_labels(train_ds, min(config.n_seed, len(train_ds)),
                               oracle, seed_rng)
    model = None
    if pool.labeled:
        model = learners.fit(config.learner, pool.labeled_features(),
                             pool.labeled_labels(), train_ds.n_classes)
    state = LoopState(pool, model)
    ctx = RunContext(config, sampler, split_index, oracle, test_X, test_y)

    budget = min(config.budget, len(train_ds) - len(pool.labeled))
    rules = config.stop or (StoppingRule("max_labels", budget),)
    if not any(r.kind == "max_labels" for r in rules):
        rules = tuple(rules) + (StoppingRule("max_labels", budget),)

    records = []
    while True:
        if evaluate_stopping(state.pool, records, rules, len(pool.labeled)) is not None:
            break
        if len(state.pool.unlabeled_ids) < sampler.batch_size:
            break
        state, record = run_round(state, ctx)
        records.append(record)
    return records


@dataclass
class ResultTable:
    """Flat per-(arm, split, round) rows with fixed-format CSV export."""

    rows: list = field(default_factory=list)

    COLUMNS = ("arm", "split", "round", "n_labeled", "f1", "precision", "recall",
               "auprc", "mean_confidence", "correct_labels", "alpha",
               "mean_weighted_uncertainty")

    def append_run(self, arm: str, split_index: int, records, n_seed: int):
        n_labeled = n_seed
        for rec in records:
            n_labeled += len(rec.queried_ids)
            self.rows.append({
                "arm": arm,
                "split": split_index,
                "round": rec.round,
                "n_labeled": n_labeled,
                "f1": rec.metrics["f1"],
                "precision": rec.metrics["precision"],
                "recall": rec.metrics["recall"],
                "auprc": rec.metrics["auprc"],
                "mean_confidence": rec.metrics["mean_confidence"],
                "correct_labels": rec.metrics.get("correct_label_count"),
                "alpha": rec.alpha,
                "mean_weighted_uncertainty": rec.mean_weighted_uncertainty,
            })

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for r in self.rows:
            correct = "" if r["correct_labels"] is None else str(r["correct_labels"])
            lines.append(
                f"{r['arm']},{r['split']},{r['round']},{r['n_labeled']},"
                f"{r['f1']:.6f},{r['precision']:.6f},{r['recall']:.6f},"
                f"{r['auprc']:.6f},{r['mean_confidence']:.6f},{correct},"
                f"{r['alpha']:.6f},{r['mean_weighted_uncertainty']:.6f}")
        return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, arms, dataset: Dataset) -> ResultTable:
    """Run every arm over every split with paired seeds.

    ``arms`` maps arm name to its SamplerConfig; every arm shares the
    config's learner, oracle, splits, seed labels, and budget.
    """
    if not isinstance(arms, dict) or not arms:
        raise EngineError("arms must be a non-empty mapping of name -> SamplerConfig")
    for name, sc in arms.items():
        if not isinstance(sc, SamplerConfig):
            raise EngineError(f"arm {name!r} is not a SamplerConfig")
        if sc.batch_size != config.batch_size:
            raise EngineError(
                f"arm {name!r} batch_size {sc.batch_size} differs from "
                f"experiment batch_size {config.batch_size}")
    table = ResultTable()
    for split_index in range(config.split.n_splits):
        for name, sc in arms.items():
            records = run_split(config, sc, split_index, dataset)
            table.append_run(name, split_index, records,
                             min(config.n_seed, _train_size(config, dataset)))
    return table


def _train_size(config: ExperimentConfig, dataset: Dataset) -> int:
    return int(round(config.split.train_fraction * len(dataset)))


def manifest(config: ExperimentConfig, arms, dataset: Dataset) -> dict:
    """Reproducibility record: full config, arms, dataset shape, backend."""
    def sampler_dict(sc):
        return {"strategy": sc.strategy, "beta": sc.beta,
                "uncertainty_measure": sc.uncertainty_measure,
                "batch_size": sc.batch_size, "mix": list(sc.mix),
                "positive_class": sc.positive_class}

    return {
        "format": "edig-run-manifest",
        "version": 1,
        "package_version": __version__,
        "kernel_backend": _kernels.backend(),
        "seed": config.seed,
        "budget": config.budget,
        "n_seed": config.n_seed,
        "batch_size": config.batch_size,
        "split": {"train_fraction": config.split.train_fraction,
                  "n_splits": config.split.n_splits, "seed": config.split.seed},
        "learner": config.learner.to_dict(),
        "oracle": config.oracle,
        "sampler": sampler_dict(config.sampler),
        "arms": {name: sampler_dict(sc) for name, sc in arms.items()},
        "stop": [{"kind": r.kind, "threshold": r.threshold} for r in config.stop],
        "dataset": {"name": dataset.name, "n": len(dataset),
                    "n_features": len(dataset.feature_names),
                    "n_classes": dataset.n_classes},
    }


def manifest_json(config: ExperimentConfig, arms, dataset: Dataset) -> str:
    return json.dumps(manifest(config, arms, dataset), indent=2, sort_keys=True)


def config_from_manifest(doc: dict) -> tuple:
    """Rebuild (config, arms) from a stored manifest so a run can be repeated."""
    if doc.get("format") != "edig-run-manifest":
        raise EngineError("not a run manifest")
    if doc.get("version") != 1:
        raise EngineError(f"unsupported manifest version {doc.get('version')!r}")

    def sampler(d):
        return SamplerConfig(strategy=d["strategy"], beta=d["beta"],
                             uncertainty_measure=d["uncertainty_measure"],
                             batch_size=d["batch_size"], mix=tuple(d["mix"]),
                             positive_class=d["positive_class"])

    try:
        config = ExperimentConfig(
            sampler=sampler(doc["sampler"]),
            learner=learners.LearnerConfig.from_dict(doc["learner"]),
            oracle=dict(doc["oracle"]),
            split=SplitSpec(**doc["split"]),
            budget=doc["budget"],
            n_seed=doc["n_seed"],
            stop=tuple(StoppingRule(**r) for r in doc["stop"]),
            seed=doc["seed"])
        arms = {name: sampler(d) for name, d in doc["arms"].items()}
    except KeyError as exc:
        raise EngineError(f"manifest is missing field {exc}") from None
    return config, arms
