"""Dataset containers, CSV ingestion, splitting, standardization and label utilities."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

ROLES = ("id", "feature_numeric", "feature_categorical", "label", "display", "ignore")

LABEL_SOURCES = ("human", "simulated", "ground_truth")


class DataError(ValueError):
    """Raised for malformed datasets, schemas, or label files."""


@dataclass(frozen=True)
class Instance:
    """One row of a dataset: id, feature vector, optional truth and display fields."""

    id: str
    features: np.ndarray
    ground_truth: int | None = None
    display: Mapping[str, str] | None = None


@dataclass(frozen=True)
class LabeledExample:
    """A label obtained for one instance, with the rater's confidence in [0, 1]."""

    instance_id: str
    label: int
    confidence: float
    source: str = "human"
    round: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")
        if self.label < 0:
            raise DataError(f"label {self.label} negative")
        if self.source not in LABEL_SOURCES:
            raise DataError(f"unknown label source {self.source!r}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    n_splits: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction {self.train_fraction} outside (0, 1)")
        if self.n_splits < 1:
            raise DataError("n_splits must be >= 1")


class Dataset:
    """Immutable columnar dataset: feature matrix plus ids, truths, display metadata.

    ``truths`` uses -1 for instances with no ground truth. Feature values are
    float64; instances are addressable by position or id.
    """

    def __init__(
        self,
        name: str,
        feature_names: Sequence[str],
        X: np.ndarray,
        ids: Sequence[str],
        truths: np.ndarray | None = None,
        displays: Sequence[Mapping[str, str] | None] | None = None,
        n_classes: int = 2,
    ):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim != 2:
            raise DataError("feature matrix must be 2-D")
        if X.shape[1] != len(feature_names):
            raise DataError(
                f"{len(feature_names)} feature names for {X.shape[1]} columns"
            )
        if len(ids) != X.shape[0]:
            raise DataError("id count does not match row count")
        if len(set(ids)) != len(ids):
            raise DataError("instance ids must be unique")
        if n_classes < 2:
            raise DataError("n_classes must be >= 2")
        if truths is None:
            truths = np.full(X.shape[0], -1, dtype=np.int64)
        else:
            truths = np.asarray(truths, dtype=np.int64)
            if truths.shape != (X.shape[0],):
                raise DataError("truths length does not match row count")
            known = truths[truths >= 0]
            if known.size and known.max() >= n_classes:
                raise DataError(
                    f"label {int(known.max())} outside declared {n_classes} classes"
                )
        if displays is not None and len(displays) != X.shape[0]:
            raise DataError("displays length does not match row count")
        self.name = name
        self.feature_names = list(feature_names)
        self.X = X
        self.ids = list(ids)
        self.truths = truths
        self.displays = list(displays) if displays is not None else None
        self.n_classes = n_classes
        self._index = {iid: i for i, iid in enumerate(self.ids)}
        self.X.setflags(write=False)
        self.truths.setflags(write=False)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def index_of(self, instance_id: str) -> int:
        try:
            return self._index[instance_id]
        except KeyError:
            raise DataError(f"unknown instance id {instance_id!r}") from None

    def instance(self, i: int) -> Instance:
        truth = int(self.truths[i])
        return Instance(
            id=self.ids[i],
            features=self.X[i],
            ground_truth=truth if truth >= 0 else None,
            display=self.displays[i] if self.displays is not None else None,
        )

    def instance_by_id(self, instance_id: str) -> Instance:
        return self.instance(self.index_of(instance_id))

    def __iter__(self) -> Iterator[Instance]:
        for i in range(len(self)):
            yield self.instance(i)

    def features_of(self, instance_ids: Sequence[str]) -> np.ndarray:
        idx = [self.index_of(i) for i in instance_ids]
        return self.X[idx]

    def subset(self, indices: Sequence[int], name: str | None = None) -> "Dataset":
        idx = list(indices)
        return Dataset(
            name=name or self.name,
            feature_names=self.feature_names,
            X=self.X[idx],
            ids=[self.ids[i] for i in idx],
            truths=self.truths[idx],
            displays=[self.displays[i] for i in idx] if self.displays else None,
            n_classes=self.n_classes,
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_schema(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        schema = json.load(fh)
    _check_schema(schema)
    return schema


def _check_schema(schema: Mapping) -> None:
    if "columns" not in schema or not isinstance(schema["columns"], Mapping):
        raise DataError("schema must carry a 'columns' mapping of column -> role")
    for col, role in schema["columns"].items():
        if role not in ROLES:
            raise DataError(f"column {col!r} has unknown role {role!r}")


def load_csv(path: str | Path, schema: Mapping) -> Dataset:
    """Load a headered CSV into a Dataset using a column-role schema.

    ``schema`` maps each column name to a role (see ``ROLES``) under
    ``columns`` and may declare ``n_classes``. Categorical features are one-hot
    encoded as ``col=value`` columns over the distinct values seen, in sorted
    order. Any unparseable numeric cell aborts the load with its row named.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    _check_schema(schema)
    columns = schema["columns"]

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)

    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"schema columns not in header: {missing}")
    unmapped = [c for c in header if c not in columns]
    if unmapped:
        raise DataError(f"header columns without a schema role: {unmapped}")

    col_pos = {c: header.index(c) for c in header}
    id_cols = [c for c, r in columns.items() if r == "id"]
    if len(id_cols) > 1:
        raise DataError("at most one id column allowed")
    label_cols = [c for c, r in columns.items() if r == "label"]
    if len(label_cols) > 1:
        raise DataError("at most one label column allowed")
    num_cols = [c for c in header if columns[c] == "feature_numeric"]
    cat_cols = [c for c in header if columns[c] == "feature_categorical"]
    disp_cols = [c for c in header if columns[c] == "display"]

    n = len(rows)
    num_vals = np.zeros((n, len(num_cols)))
    for j, c in enumerate(num_cols):
        p = col_pos[c]
        for i, row in enumerate(rows):
            try:
                num_vals[i, j] = float(row[p])
            except (ValueError, IndexError):
                cell = row[p] if p < len(row) else "<missing>"
                raise DataError(
                    f"{path}: row {i + 1}, column {c!r}: cannot parse {cell!r} as a number"
                ) from None

    cat_names: list[str] = []
    cat_blocks: list[np.ndarray] = []
    for c in cat_cols:
        p = col_pos[c]
        values = sorted({row[p] for row in rows})
        block = np.zeros((n, len(values)))
        vidx = {v: k for k, v in enumerate(values)}
        for i, row in enumerate(rows):
            block[i, vidx[row[p]]] = 1.0
        cat_names.extend(f"{c}={v}" for v in values)
        cat_blocks.append(block)

    X = np.hstack([num_vals] + cat_blocks) if cat_blocks else num_vals
    feature_names = num_cols + cat_names

    if id_cols:
        p = col_pos[id_cols[0]]
        ids = [row[p] for row in rows]
    else:
        ids = [f"r{i:06d}" for i in range(n)]

    truths = None
    n_classes = int(schema.get("n_classes", 0))
    if label_cols:
        p = col_pos[label_cols[0]]
        truths = np.full(n, -1, dtype=np.int64)
        for i, row in enumerate(rows):
            raw = row[p].strip()
            if raw == "":
                continue
            try:
                truths[i] = int(raw)
            except ValueError:
                raise DataError(
                    f"{path}: row {i + 1}: label {raw!r} is not an integer"
                ) from None
        if not n_classes:
            n_classes = int(truths.max()) + 1 if (truths >= 0).any() else 2
        n_classes = max(n_classes, 2)
        bad = np.nonzero((truths >= n_classes))[0]
        if bad.size:
            raise DataError(
                f"{path}: row {int(bad[0]) + 1}: label {int(truths[bad[0]])} "
                f"outside declared {n_classes} classes"
            )
    else:
        n_classes = max(n_classes, 2)

    displays = None
    if disp_cols:
        displays = [
            {c: row[col_pos[c]] for c in disp_cols} for row in rows
        ]

    return Dataset(
        name=path.stem,
        feature_names=feature_names,
        X=X,
        ids=ids,
        truths=truths,
        displays=displays,
        n_classes=n_classes,
    )


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-score transform; constant columns map to all zeros."""

    feature_names: tuple
    mean: np.ndarray
    std: np.ndarray

    def apply_matrix(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0.0, self.std, 1.0)
        Z = (X - self.mean) / safe
        Z[:, self.std == 0.0] = 0.0
        return Z

    def invert_matrix(self, Z: np.ndarray) -> np.ndarray:
        return Z * np.where(self.std > 0.0, self.std, 0.0) + self.mean

    def apply(self, dataset: Dataset) -> Dataset:
        if tuple(dataset.feature_names) != self.feature_names:
            raise DataError("standardizer fitted on different feature names")
        return Dataset(
            name=dataset.name,
            feature_names=dataset.feature_names,
            X=self.apply_matrix(dataset.X),
            ids=dataset.ids,
            truths=dataset.truths,
            displays=dataset.displays,
            n_classes=dataset.n_classes,
        )

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Standardizer":
        return cls(
            feature_names=tuple(doc["feature_names"]),
            mean=np.asarray(doc["mean"], dtype=np.float64),
            std=np.asarray(doc["std"], dtype=np.float64),
        )


def standardize(dataset: Dataset) -> tuple[Dataset, Standardizer]:
    """Fit a z-score transform on ``dataset`` and return (transformed, record)."""
    if len(dataset) == 0:
        raise DataError("cannot standardize an empty dataset")
    mean = dataset.X.mean(axis=0)
    std = dataset.X.std(axis=0)  # population stddev; constant columns become 0
    rec = Standardizer(tuple(dataset.feature_names), mean, std)
    return rec.apply(dataset), rec


# ---------------------------------------------------------------------------
# Train/test splitting
# ---------------------------------------------------------------------------


def split(dataset: Dataset, spec: SplitSpec, split_index: int) -> tuple[Dataset, Dataset]:
    """Deterministic train/test partition for one of ``spec.n_splits`` splits."""
    if not 0 <= split_index < spec.n_splits:
        raise DataError(
            f"split_index {split_index} outside [0, {spec.n_splits})"
        )
    n = len(dataset)
    rng = np.random.default_rng([spec.seed, split_index])
    perm = rng.permutation(n)
    n_train = int(round(spec.train_fraction * n))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (
        dataset.subset(train_idx, f"{dataset.name}-train{split_index}"),
        dataset.subset(test_idx, f"{dataset.name}-test{split_index}"),
    )


# ---------------------------------------------------------------------------
# Confidence-to-multiclass label transform
# ---------------------------------------------------------------------------


def transform_confidence_label(label: int, confidence_0_10: int) -> int:
    """Fold a binary label and a 0-10 confidence into one 0-10 class.

    Label 0 maps to ``10 - conf`` and label 1 to ``round((conf + 10) / 2)``
    with half-up rounding, so outputs >= 5 always mean label 1.
    """
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label}")
    conf = int(confidence_0_10)
    if conf != confidence_0_10 or not 0 <= conf <= 10:
        raise DataError(f"confidence must be an integer in [0, 10], got {confidence_0_10}")
    if label == 0:
        return 10 - conf
    return (conf + 11) // 2  # == floor((conf + 10)/2 + 0.5), half-up


def confidence_to_unit(confidence_0_10: int) -> float:
    """Canonicalize an elicited 0-10 integer confidence to the [0, 1] scale."""
    conf = int(confidence_0_10)
    if conf != confidence_0_10 or not 0 <= conf <= 10:
        raise DataError(f"confidence must be an integer in [0, 10], got {confidence_0_10}")
    return conf / 10.0


# ---------------------------------------------------------------------------
# String similarity (sender-vs-address feature helper)
# ---------------------------------------------------------------------------


def levenshtein_similarity(a: str, b: str) -> float:
    """1 - edit_distance(a, b) / max(len); two empty strings are similarity 1."""
    if not a and not b:
        return 1.0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return 1.0 - prev[-1] / len(a)


# ---------------------------------------------------------------------------
# Synthetic anomaly-flavoured dataset
# ---------------------------------------------------------------------------

SYNTHETIC_FEATURES = [
    "profile_0",
    "profile_1",
    "profile_2",
    "profile_3",
    "attach_size",
    "term_count",
    "recipient_count",
    "noise_0",
    "noise_1",
]


def generate_synthetic_anomaly_dataset(
    n: int, anomaly_rate: float, seed: int, name: str = "synthetic"
) -> Dataset:
    """Two-class tabular dataset with Gaussian profile features plus skewed
    count-like columns (attachment size, sensitive-term count, recipients).

    The positive-class count is fixed at round(n * rate) so prevalence is exact
    up to rounding; rows are shuffled so classes interleave.
    """
    if n < 10:
        raise DataError("n must be >= 10")
    if not 0.0 < anomaly_rate < 1.0:
        raise DataError(f"anomaly_rate {anomaly_rate} outside (0, 1)")
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * anomaly_rate))
    y = np.zeros(n, dtype=np.int64)
    y[:n_pos] = 1
    y = y[rng.permutation(n)]

    X = np.empty((n, len(SYNTHETIC_FEATURES)))
    pos = y == 1
    shift = 0.9  # per-dimension class separation of the profile block
    for j in range(4):
        X[:, j] = rng.normal(0.0, 1.0, n)
        X[pos, j] += shift
    # log-normal attachment size, heavier for anomalies
    X[:, 4] = np.exp(rng.normal(1.0, 0.8, n) + 0.9 * pos)
    X[:, 5] = rng.poisson(np.where(pos, 3.0, 1.0))
    X[:, 6] = rng.poisson(np.where(pos, 3.0, 2.0))
    X[:, 7] = rng.normal(0.0, 1.0, n)
    X[:, 8] = rng.normal(0.0, 1.0, n)

    ids = [f"s{i:06d}" for i in range(n)]
    displays = [
        {
            "subject": f"[redacted] message {i:06d}",
            "sender": f"user{int(rng.integers(0, max(10, n // 20))):04d}",
            "attachments": str(int(max(0, round(X[i, 6])))),
        }
        for i in range(n)
    ]
    return Dataset(
        name=name,
        feature_names=SYNTHETIC_FEATURES,
        X=X,
        ids=ids,
        truths=y,
        displays=displays,
        n_classes=2,
    )
