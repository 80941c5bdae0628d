"""Operator command line: simulate, report, serve, transform, generate.

Exit codes: 0 success, 2 usage error (bad flags, unknown arm), 1 runtime
failure (missing files, malformed data, port busy). Every command that
takes --seed writes byte-identical output on rerun.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, engine, stats
from .data import (DataError, Dataset, SplitSpec, generate_synthetic_anomaly_dataset,
                   load_csv, load_schema, transform_confidence_label)
from .engine import EngineError, ExperimentConfig
from .learners import LearnerConfig, LearnerError
from .oracles import OracleError
from .sampling import STRATEGIES, SamplerConfig, SamplingError
from .stats import StatsError

PACKAGE_ERRORS = (DataError, EngineError, LearnerError, OracleError,
                  SamplingError, StatsError)


def _infer_schema(path: Path) -> dict:
    """Role guesses when no schema file is given: 'id' and 'label' columns
    by name, everything else a numeric feature."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: empty file, header row required")
    columns = {}
    for col in header:
        low = col.strip().lower()
        if low == "id":
            columns[col] = "id"
        elif low == "label":
            columns[col] = "label"
        elif low in ("subject", "sender", "attachments", "display"):
            columns[col] = "display"
        else:
            columns[col] = "feature_numeric"
    return {"columns": columns}


def _load_dataset(path_str: str, schema_str: str | None) -> Dataset:
    path = Path(path_str)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if schema_str:
        schema = load_schema(schema_str)
    else:
        sibling = path.with_suffix(".schema.json")
        schema = load_schema(sibling) if sibling.exists() else _infer_schema(path)
    return load_csv(path, schema)


def _parse_arms(spec: str, batch: int, beta: float, measure: str,
                mix: tuple | None) -> dict:
    arms = {}
    for name in spec.split(","):
        name = name.strip()
        if not name:
            continue
        if name not in STRATEGIES:
            raise _UsageError(
                f"unknown arm {name!r} (choose from {', '.join(STRATEGIES)})")
        if name in arms:
            raise _UsageError(f"arm {name!r} listed twice")
        kwargs = dict(strategy=name, beta=beta, uncertainty_measure=measure,
                      batch_size=batch)
        if name == "top_positive_mix":
            kwargs["mix"] = mix if mix is not None else (batch - 2, 1, 1)
        arms[name] = SamplerConfig(**kwargs)
    if not arms:
        raise _UsageError("--arms must name at least one strategy")
    return arms


class _UsageError(Exception):
    """Flag-level mistake; maps to exit code 2."""


def _simulate_command(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args.dataset, args.schema)
    mix = None
    if args.mix:
        mix = tuple(int(v) for v in args.mix.split(","))
        if len(mix) != 3:
            raise _UsageError("--mix takes three comma-separated counts")
    arms = _parse_arms(args.arms, args.batch, args.beta, args.measure, mix)
    oracle = {"kind": args.oracle, "seed": args.oracle_seed}
    if args.oracle == "simulated":
        oracle["error_rate_at_min_confidence"] = args.oracle_error
    config = ExperimentConfig(
        sampler=next(iter(arms.values())),
        learner=LearnerConfig(kind=args.learner, seed=args.seed),
        oracle=oracle,
        split=SplitSpec(train_fraction=args.train_fraction,
                        n_splits=args.splits, seed=args.seed),
        budget=args.budget,
        n_seed=args.n_seed,
        seed=args.seed,
    )
    table = engine.run_experiment(config, arms, dataset)
    out = Path(args.out)
    out.write_text(table.to_csv(), encoding="utf-8")
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    manifest_path.write_text(engine.manifest_json(config, arms, dataset) + "\n",
                             encoding="utf-8")
    print(f"wrote {len(table.rows)} rows to {out}")
    print(f"wrote manifest to {manifest_path}")
    return 0


def _read_results(path_str: str) -> list:
    path = Path(path_str)
    if not path.exists():
        raise DataError(f"results file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty results file")
        needed = {"arm", "split", "round", "n_labeled", "f1", "mean_confidence"}
        missing = needed - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for i, row in enumerate(reader):
            try:
                rows.append({
                    "arm": row["arm"],
                    "split": int(row["split"]),
                    "round": int(row["round"]),
                    "n_labeled": int(row["n_labeled"]),
                    "f1": float(row["f1"]),
                    "mean_confidence": float(row["mean_confidence"]),
                })
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: row {i + 2}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def build_report(rows: list, budget_fraction: float = 0.3) -> dict:
    """Cross-arm comparisons and per-arm trends from a results table.

    Two named arms are compared checkpoint by checkpoint (rank-sum across
    splits plus signed-rank on the per-split pairing); with one arm the
    comparisons are skipped and only curves/trends are reported.
    """
    arms = sorted({r["arm"] for r in rows})
    rounds = sorted({r["round"] for r in rows})
    by = {}
    for r in rows:
        by.setdefault((r["arm"], r["round"]), []).append(r)

    def f1s(arm, rnd):
        cell = sorted(by.get((arm, rnd), []), key=lambda r: r["split"])
        return [r["f1"] for r in cell]

    report: dict = {"arms": arms, "rounds": rounds}

    curves = {}
    for arm in arms:
        curve = []
        for rnd in rounds:
            vals = f1s(arm, rnd)
            cell = by.get((arm, rnd), [])
            curve.append({
                "round": rnd,
                "n_labeled": cell[0]["n_labeled"] if cell else None,
                "mean_f1": float(np.mean(vals)) if vals else None,
                "std_f1": float(np.std(vals)) if vals else None,
                "n_splits": len(vals),
            })
        curves[arm] = curve
    report["curves"] = curves

    trends = {}
    for arm in arms:
        xs, ys = [], []
        for r in rows:
            if r["arm"] == arm:
                xs.append(r["round"])
                ys.append(r["mean_confidence"])
        trend: dict = {"n": len(xs)}
        try:
            trend["slope"] = stats.ols_slope(xs, ys)
            pr = stats.pearson_r(xs, ys)
            trend["pearson_r"] = pr.statistic
            trend["p_value"] = pr.p_value
        except StatsError as exc:
            trend["notice"] = str(exc)
        trends[arm] = trend
    report["confidence_trends"] = trends

    if "edig" in arms and "rbm" in arms:
        pair = ("edig", "rbm")
    elif len(arms) == 2:
        pair = (arms[0], arms[1])
    else:
        report["comparisons"] = None
        report["notice"] = (
            "comparison tests need exactly two arms (or rbm and edig); "
            f"found {arms}")
        return report

    a, b = pair
    comparisons = []
    for rnd in rounds:
        va, vb = f1s(a, rnd), f1s(b, rnd)
        entry: dict = {"round": rnd}
        cell = by.get((a, rnd), [])
        entry["n_labeled"] = cell[0]["n_labeled"] if cell else None
        if len(va) >= 2 and len(vb) >= 2:
            mw = stats.mann_whitney_u(va, vb)
            entry["mann_whitney"] = mw.to_dict()
            entry["mean_f1"] = {a: float(np.mean(va)), b: float(np.mean(vb))}
            if len(va) == len(vb):
                try:
                    wx = stats.wilcoxon_signed_rank(va, vb)
                    entry["wilcoxon"] = wx.to_dict()
                except StatsError as exc:  # all-zero differences
                    entry["wilcoxon"] = {"notice": str(exc)}
        else:
            entry["notice"] = "too few splits for tests"
        comparisons.append(entry)
    report["comparisons"] = {"arms": [a, b], "per_round": comparisons}

    # flag the checkpoint nearest the requested budget fraction
    if rounds:
        idx = min(len(rounds) - 1,
                  max(0, int(np.ceil(budget_fraction * len(rounds))) - 1))
        rnd = rounds[idx]
        va, vb = f1s(a, rnd), f1s(b, rnd)
        if va and vb:
            report["budget_fraction_checkpoint"] = {
                "fraction": budget_fraction,
                "round": rnd,
                "mean_f1": {a: float(np.mean(va)), b: float(np.mean(vb))},
                "first_arm_at_least_second": bool(np.mean(va) >= np.mean(vb)),
            }
    return report


def _report_command(args: argparse.Namespace) -> int:
    rows = _read_results(args.results)
    report = build_report(rows, args.budget_fraction)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote report to {args.out}")
    else:
        sys.stdout.write(text)
    if report.get("notice"):
        print(f"notice: {report['notice']}", file=sys.stderr)
    return 0


def _serve_command(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    dataset = _load_dataset(args.dataset, args.schema)
    data_dir = args.data_dir or os.environ.get("EDIG_DATA_DIR", "edig-sessions")
    app = create_app(dataset, data_dir)
    for note in app.state.recovery_notes:
        print(f"recovery: {note}", file=sys.stderr)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except (OSError, SystemExit) as exc:
        print(f"error: cannot serve on port {args.port}: {exc}", file=sys.stderr)
        return 1
    return 0


def _transform_command(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if not path.exists():
        raise DataError(f"label file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, header row required")
        rows = list(reader)
    try:
        li = header.index(args.label_column)
    except ValueError:
        raise DataError(f"{path}: no column {args.label_column!r}") from None
    try:
        ci = header.index(args.confidence_column)
    except ValueError:
        raise DataError(f"{path}: no column {args.confidence_column!r}") from None

    out_rows = []
    for i, row in enumerate(rows):
        lineno = i + 2  # header is line 1
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} "
                            f"fields, found {len(row)}")
        try:
            label = int(row[li])
            conf = int(row[ci])
        except ValueError:
            raise DataError(
                f"{path}: line {lineno}: label and confidence must be "
                f"integers (got {row[li]!r}, {row[ci]!r})") from None
        try:
            multi = transform_confidence_label(label, conf)
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
        out_rows.append(row + [str(multi)])

    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + [args.output_column])
        writer.writerows(out_rows)
    print(f"wrote {len(out_rows)} rows to {out}")
    return 0


def _generate_command(args: argparse.Namespace) -> int:
    dataset = generate_synthetic_anomaly_dataset(args.n, args.anomaly_rate,
                                                 args.seed)
    out = Path(args.out)
    display_cols = sorted(dataset.displays[0]) if dataset.displays else []
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + dataset.feature_names + display_cols + ["label"])
        for i, iid in enumerate(dataset.ids):
            disp = dataset.displays[i] if dataset.displays else {}
            writer.writerow(
                [iid] + [f"{v:.10g}" for v in dataset.X[i]]
                + [disp.get(c, "") for c in display_cols]
                + [int(dataset.truths[i])])
    schema = {"columns": {"id": "id", "label": "label"}, "n_classes": 2}
    for c in dataset.feature_names:
        schema["columns"][c] = "feature_numeric"
    for c in display_cols:
        schema["columns"][c] = "display"
    schema_path = out.with_suffix(".schema.json")
    schema_path.write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(dataset)} rows to {out}")
    print(f"wrote schema to {schema_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edig",
        description="Batch active learning with expert confidence weighting.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run sampler arms against a simulated oracle")
    p.add_argument("--dataset", required=True, help="dataset CSV path")
    p.add_argument("--schema", help="column-role schema JSON (default: sibling "
                   ".schema.json or inferred from header names)")
    p.add_argument("--arms", default="rbm,edig",
                   help="comma-separated strategies (default rbm,edig)")
    p.add_argument("--splits", type=int, default=20)
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--budget", type=int, default=100,
                   help="total labels to query after seeding")
    p.add_argument("--n-seed", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--measure", default="least_confident",
                   choices=("least_confident", "margin", "entropy"))
    p.add_argument("--mix", help="top,uncertain,random counts for top_positive_mix")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--learner", default="random_forest",
                   choices=("knn", "gaussian_nb", "decision_tree", "random_forest"))
    p.add_argument("--oracle", default="simulated",
                   choices=("simulated", "ground_truth"))
    p.add_argument("--oracle-error", type=float, default=0.3,
                   help="label error rate at the lowest clamped confidence")
    p.add_argument("--oracle-seed", type=int, default=0)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--manifest", help="manifest path (default <out>.manifest.json)")
    p.set_defaults(func=_simulate_command)

    p = sub.add_parser("report", help="statistics and curves from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--budget-fraction", type=float, default=0.3,
                   help="checkpoint to flag for the early-parity comparison")
    p.set_defaults(func=_report_command)

    p = sub.add_parser("serve", help="start the labeling session service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8707)
    p.add_argument("--data-dir",
                   help="session log directory (default $EDIG_DATA_DIR or ./edig-sessions)")
    p.set_defaults(func=_serve_command)

    p = sub.add_parser("transform",
                       help="append the confidence-expanded label column")
    p.add_argument("--in", dest="input", required=True, help="label CSV path")
    p.add_argument("--out", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--confidence-column", default="confidence")
    p.add_argument("--output-column", default="multiclass_label")
    p.set_defaults(func=_transform_command)

    p = sub.add_parser("generate", help="write a synthetic dataset CSV + schema")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--anomaly-rate", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.csv")
    p.set_defaults(func=_generate_command)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except PACKAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
