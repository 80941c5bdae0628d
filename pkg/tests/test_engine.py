"""Experiment loop: seeding, budgets, stopping, pairing, reproducibility."""

import json

import numpy as np
import pytest

from edig import stats
from edig.data import Dataset, SplitSpec, generate_synthetic_anomaly_dataset
from edig.engine import (CONFIDENCE_STOP_WINDOW, EngineError, ExperimentConfig,
                         ResultTable, RoundRecord, StoppingRule, config_from_manifest,
                         derive_oracle_seed, derive_rng, evaluate_stopping,
                         manifest, manifest_json, run_experiment, run_split,
                         seed_initial_labels)
from edig.engine import test_metrics as compute_test_metrics
from edig.learners import LearnerConfig, fit, predict_proba
from edig.oracles import GroundTruthOracle
from edig.sampling import SamplerConfig


def knn_config(seed=0):
    return LearnerConfig(kind="knn", k=3, seed=seed)


def base_config(**over):
    kw = dict(
        sampler=SamplerConfig(strategy="rbm", batch_size=5),
        learner=knn_config(),
        oracle={"kind": "ground_truth"},
        split=SplitSpec(train_fraction=0.5, n_splits=2, seed=1),
        budget=25,
        n_seed=10,
        seed=7,
    )
    kw.update(over)
    return ExperimentConfig(**kw)


def class_dataset(n0, n1, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (n0 + n1, 3))
    X[n0:] += 2.5
    truths = np.array([0] * n0 + [1] * n1)
    ids = [f"c{i:03d}" for i in range(n0 + n1)]
    return Dataset("classes", ("a", "b", "c"), X, ids, truths)


# ---------------------------------------------------------------------------
# RNG derivation
# ---------------------------------------------------------------------------


def test_derive_rng_stable_and_stream_separated():
    a = derive_rng(7, 1, 2, 0).random(5)
    b = derive_rng(7, 1, 2, 0).random(5)
    assert np.array_equal(a, b)
    for other in (derive_rng(7, 1, 2, 1), derive_rng(7, 1, 3, 0),
                  derive_rng(7, 2, 2, 0), derive_rng(8, 1, 2, 0)):
        assert not np.array_equal(a, other.random(5))


def test_derive_oracle_seed_per_split():
    s0 = derive_oracle_seed(0, 7, 0)
    assert s0 == derive_oracle_seed(0, 7, 0)
    assert s0 != derive_oracle_seed(0, 7, 1)
    assert s0 != derive_oracle_seed(1, 7, 0)
    assert isinstance(s0, int)


# ---------------------------------------------------------------------------
# Seed labeling
# ---------------------------------------------------------------------------


def test_stratified_seed_apportionment():
    ds = class_dataset(30, 10)
    pool = seed_initial_labels(ds, 8, GroundTruthOracle(),
                               np.random.default_rng(0))
    labels = pool.labeled_labels()
    # 75/25 split of 8 seeds -> 6 and 2
    assert (labels == 0).sum() == 6
    assert (labels == 1).sum() == 2
    assert len(pool.unlabeled_ids) == 32
    assert pool.round == 0
    assert all(ex.source == "ground_truth" and ex.confidence == 1.0
               for ex in pool.labeled)
    # seed labels echo the truth
    for ex in pool.labeled:
        assert ex.label == ds.truths[ds.index_of(ex.instance_id)]


def test_stratified_guarantees_minority_pick():
    ds = class_dataset(19, 1)
    pool = seed_initial_labels(ds, 5, GroundTruthOracle(),
                               np.random.default_rng(1))
    labels = pool.labeled_labels()
    assert (labels == 1).sum() == 1  # forced despite 5% share
    assert (labels == 0).sum() == 4


def test_seed_labeling_edge_cases():
    ds = class_dataset(6, 6)
    empty = seed_initial_labels(ds, 0, GroundTruthOracle(),
                                np.random.default_rng(2))
    assert empty.labeled == () and len(empty.unlabeled_ids) == 12
    with pytest.raises(EngineError):
        seed_initial_labels(ds, 13, GroundTruthOracle(), np.random.default_rng(2))
    with pytest.raises(EngineError):
        seed_initial_labels(ds, 4, GroundTruthOracle(), np.random.default_rng(2),
                            policy="alphabetical")
    rand = seed_initial_labels(ds, 4, GroundTruthOracle(),
                               np.random.default_rng(3), policy="random")
    assert len(rand.labeled) == 4


def test_seed_labeling_deterministic():
    ds = class_dataset(20, 20)
    a = seed_initial_labels(ds, 6, GroundTruthOracle(), np.random.default_rng(9))
    b = seed_initial_labels(ds, 6, GroundTruthOracle(), np.random.default_rng(9))
    assert a.labeled_ids == b.labeled_ids


# ---------------------------------------------------------------------------
# Stopping rules
# ---------------------------------------------------------------------------


def fake_record(round_no, mean_conf):
    return RoundRecord(round_no, ("x",), (None,),
                       {"mean_confidence": mean_conf}, 0.5, 0.1)


def test_max_labels_counts_queried_only():
    ds = class_dataset(10, 10)
    pool = seed_initial_labels(ds, 6, GroundTruthOracle(), np.random.default_rng(0))
    rules = (StoppingRule("max_labels", 5),)
    assert evaluate_stopping(pool, [], rules, n_seed=6) is None  # 0 queried
    grown = pool.with_new_labels(
        [type(pool.labeled[0])(i, 0, 0.5, "human", 0)
         for i in pool.unlabeled_ids[:5]])
    assert evaluate_stopping(grown, [], rules, n_seed=6) == "max_labels"


def test_confidence_stop_uses_trailing_window():
    rules = (StoppingRule("min_mean_confidence", 0.4),)
    ds = class_dataset(5, 5)
    pool = seed_initial_labels(ds, 2, GroundTruthOracle(), np.random.default_rng(0))
    assert CONFIDENCE_STOP_WINDOW == 2
    # no records yet: cannot trigger
    assert evaluate_stopping(pool, [], rules, 2) is None
    # single low round triggers on its own
    assert evaluate_stopping(pool, [fake_record(0, 0.3)], rules, 2) == "min_mean_confidence"
    # early low round is forgotten once the window has moved past it
    recs = [fake_record(0, 0.1), fake_record(1, 0.9), fake_record(2, 0.9)]
    assert evaluate_stopping(pool, recs, rules, 2) is None
    # window mean (0.9 + 0.3)/2 = 0.6 stays above threshold
    recs = [fake_record(0, 0.9), fake_record(1, 0.3)]
    assert evaluate_stopping(pool, recs, rules, 2) is None
    recs = [fake_record(0, 0.35), fake_record(1, 0.35)]
    assert evaluate_stopping(pool, recs, rules, 2) == "min_mean_confidence"


def test_manual_stop_needs_flag():
    ds = class_dataset(5, 5)
    pool = seed_initial_labels(ds, 2, GroundTruthOracle(), np.random.default_rng(0))
    rules = (StoppingRule("manual"),)
    assert evaluate_stopping(pool, [], rules, 2) is None
    assert evaluate_stopping(pool, [], rules, 2, manual_stop=True) == "manual"


def test_stopping_rule_validation():
    with pytest.raises(EngineError):
        StoppingRule("coffee_break")
    with pytest.raises(EngineError):
        StoppingRule("max_labels", 0)
    with pytest.raises(EngineError):
        StoppingRule("min_mean_confidence", 1.5)


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------


def test_experiment_config_validation():
    with pytest.raises(EngineError):
        base_config(batch_size=4)  # disagrees with sampler's 5
    with pytest.raises(EngineError):
        base_config(budget=3)  # below one batch
    with pytest.raises(EngineError):
        base_config(n_seed=-1)
    with pytest.raises(EngineError):
        base_config(stop=("max_labels",))  # must be StoppingRule objects
    with pytest.raises(Exception):
        base_config(oracle={"kind": "psychic"})  # validated eagerly
    cfg = base_config()
    assert cfg.batch_size == 5  # inherited from the sampler


# ---------------------------------------------------------------------------
# run_split / run_experiment
# ---------------------------------------------------------------------------


def test_round_cardinality_and_label_accounting():
    ds = generate_synthetic_anomaly_dataset(n=120, anomaly_rate=0.5, seed=40)
    cfg = base_config(budget=25)
    records = run_split(cfg, cfg.sampler, 0, ds)
    assert len(records) == 5  # budget 25 / batch 5
    assert [r.round for r in records] == [0, 1, 2, 3, 4]
    assert all(len(r.queried_ids) == 5 for r in records)
    table = ResultTable()
    table.append_run("rbm", 0, records, 10)
    assert [row["n_labeled"] for row in table.rows] == [15, 20, 25, 30, 35]
    for row in table.rows:
        assert 0 <= row["f1"] <= 1
        assert row["correct_labels"] == 5  # ground-truth oracle never errs


def test_budget_capped_by_pool():
    ds = generate_synthetic_anomaly_dataset(n=40, anomaly_rate=0.5, seed=41)
    cfg = base_config(budget=100, n_seed=4,
                      sampler=SamplerConfig(strategy="rbm", batch_size=4),
                      split=SplitSpec(train_fraction=0.5, n_splits=1, seed=2))
    records = run_split(cfg, cfg.sampler, 0, ds)
    # 20 training instances, 4 seeded -> 16 queryable -> 4 rounds of 4
    assert len(records) == 4
    assert sum(len(r.queried_ids) for r in records) == 16


def test_stop_rule_cuts_run_short():
    ds = generate_synthetic_anomaly_dataset(n=120, anomaly_rate=0.5, seed=42)
    cfg = base_config(budget=25, stop=(StoppingRule("max_labels", 10),))
    assert len(run_split(cfg, cfg.sampler, 0, ds)) == 2
    low_conf = base_config(
        budget=25,
        oracle={"kind": "noisy", "flip_prob": 0.0,
                "confidence_dist": ("constant", 0.2)},
        stop=(StoppingRule("min_mean_confidence", 0.3),))
    assert len(run_split(low_conf, low_conf.sampler, 0, ds)) == 1


def test_experiment_table_shape_and_rerun_identical():
    ds = generate_synthetic_anomaly_dataset(n=100, anomaly_rate=0.5, seed=43)
    cfg = base_config(budget=15,
                      split=SplitSpec(train_fraction=0.5, n_splits=3, seed=3))
    arms = {"rbm": SamplerConfig(strategy="rbm", batch_size=5),
            "edig": SamplerConfig(strategy="edig", batch_size=5)}
    t1 = run_experiment(cfg, arms, ds)
    assert len(t1.rows) == 2 * 3 * 3  # arms x splits x rounds
    assert {r["arm"] for r in t1.rows} == {"rbm", "edig"}
    t2 = run_experiment(cfg, arms, ds)
    assert t1.to_csv() == t2.to_csv()
    header = t1.to_csv().split("\n")[0]
    assert header == ",".join(ResultTable.COLUMNS)


def test_paired_arms_share_split_conditions():
    ds = generate_synthetic_anomaly_dataset(n=100, anomaly_rate=0.5, seed=44)
    cfg = base_config(budget=10,
                      split=SplitSpec(train_fraction=0.5, n_splits=2, seed=4))
    arms = {"rbm": SamplerConfig(strategy="rbm", batch_size=5),
            "edig": SamplerConfig(strategy="edig", batch_size=5)}
    table = run_experiment(cfg, arms, ds)
    for s in (0, 1):
        by_arm = {a: [r for r in table.rows if r["arm"] == a and r["split"] == s]
                  for a in arms}
        # same round structure and label accounting on the shared split
        assert [r["n_labeled"] for r in by_arm["rbm"]] == \
               [r["n_labeled"] for r in by_arm["edig"]]
        assert [r["round"] for r in by_arm["rbm"]] == [0, 1]


def test_f1_improves_with_labels():
    ds = generate_synthetic_anomaly_dataset(n=240, anomaly_rate=0.5, seed=45)
    cfg = base_config(budget=60, n_seed=6,
                      split=SplitSpec(train_fraction=0.5, n_splits=3, seed=5))
    arms = {"edig": SamplerConfig(strategy="edig", batch_size=5)}
    table = run_experiment(cfg, arms, ds)
    first = np.mean([r["f1"] for r in table.rows if r["round"] == 0])
    last_round = max(r["round"] for r in table.rows)
    last = np.mean([r["f1"] for r in table.rows if r["round"] == last_round])
    assert last > first


def test_experiment_arm_validation():
    ds = generate_synthetic_anomaly_dataset(n=40, anomaly_rate=0.5, seed=46)
    cfg = base_config(budget=10)
    with pytest.raises(EngineError):
        run_experiment(cfg, {}, ds)
    with pytest.raises(EngineError):
        run_experiment(cfg, {"rbm": "rbm"}, ds)
    with pytest.raises(EngineError):
        run_experiment(cfg, {"rbm": SamplerConfig(strategy="rbm", batch_size=4)}, ds)


# ---------------------------------------------------------------------------
# Metrics and CSV
# ---------------------------------------------------------------------------


def test_test_metrics_matches_direct_computation():
    ds = class_dataset(30, 30, seed=50)
    model = fit(knn_config(), ds.X[:40], ds.truths[:40], 2)
    got = compute_test_metrics(model, ds.X[40:], ds.truths[40:], 1)
    probs = predict_proba(model, ds.X[40:])
    preds = np.argmax(probs, axis=1)
    f1, prec, rec = stats.f1_precision_recall(preds, ds.truths[40:], 1)
    assert got["f1"] == f1 and got["precision"] == prec and got["recall"] == rec
    assert got["auprc"] == stats.auprc(probs[:, 1], ds.truths[40:], 1)


def test_csv_formatting():
    table = ResultTable()
    rec = RoundRecord(0, ("a", "b"), (None, None),
                      {"f1": 0.5, "precision": 1 / 3, "recall": 0.25,
                       "auprc": 0.125, "mean_confidence": 0.42}, 0.9, 0.0525)
    table.append_run("rbm", 2, [rec], 4)
    lines = table.to_csv().split("\n")
    assert lines[1] == "rbm,2,0,6,0.500000,0.333333,0.250000,0.125000,0.420000,,0.900000,0.052500"
    assert lines[-1] == ""  # trailing newline


def test_manifest_contents_and_stability():
    ds = generate_synthetic_anomaly_dataset(n=50, anomaly_rate=0.5, seed=47)
    cfg = base_config(budget=10)
    arms = {"rbm": cfg.sampler}
    m = manifest(cfg, arms, ds)
    assert m["format"] == "edig-run-manifest" and m["version"] == 1
    assert m["kernel_backend"] in ("numba", "numpy")
    assert m["seed"] == 7 and m["budget"] == 10 and m["batch_size"] == 5
    assert m["split"] == {"train_fraction": 0.5, "n_splits": 2, "seed": 1}
    assert m["dataset"]["n"] == 50 and m["dataset"]["n_classes"] == 2
    assert m["arms"]["rbm"]["strategy"] == "rbm"
    assert manifest_json(cfg, arms, ds) == manifest_json(cfg, arms, ds)


def test_manifest_round_trips_to_config():
    ds = generate_synthetic_anomaly_dataset(n=50, anomaly_rate=0.5, seed=48)
    cfg = base_config(budget=10, stop=(StoppingRule("max_labels", 8),))
    arms = {"rbm": cfg.sampler,
            "edig": SamplerConfig(strategy="edig", batch_size=5)}
    doc = json.loads(manifest_json(cfg, arms, ds))
    cfg2, arms2 = config_from_manifest(doc)
    assert cfg2 == cfg
    assert arms2 == arms
    with pytest.raises(EngineError):
        config_from_manifest({"format": "something-else"})
    clipped = dict(doc)
    del clipped["sampler"]
    with pytest.raises(EngineError):
        config_from_manifest(clipped)
