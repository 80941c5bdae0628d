"""Evaluation metrics and rank-based hypothesis tests.

Everything here is deterministic and pure. The rank tests switch between
an exact permutation p-value at small sample sizes and a tie-corrected
normal approximation (with 0.5 continuity correction) above that; the
``method`` field of :class:`TestResult` records which path ran. All tests
are two-tailed; exact two-tailed p-values count permutations whose
statistic deviates from the null mean by at least the observed amount,
which stays well defined under ties.

Thresholds: Mann-Whitney and Wilcoxon go exact when the combined (or
effective) sample size is at most 12; the ordered-trend test goes exact
when the pooled size is at most 10 (it enumerates value-to-group
contingency tables, so heavy ties cost nothing extra).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr
from scipy.stats import rankdata

MW_EXACT_MAX_N = 12
WILCOXON_EXACT_MAX_N = 12
JT_EXACT_MAX_N = 10


class StatsError(ValueError):
    """Invalid input to a metric or test."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # exact_permutation | normal_approx | t_dist
    n: tuple
    tails: str = "two"

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value,
                "method": self.method, "n": list(self.n), "tails": self.tails}


def _norm_sf(z: float) -> float:
    # upper tail of the standard normal
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _two_tailed_normal(dev: float, sigma: float) -> float:
    """Two-tailed p for a deviation from the mean, continuity-corrected."""
    if sigma == 0.0:
        return 1.0
    z = (abs(dev) - 0.5) / sigma
    if z < 0.0:
        z = 0.0
    return min(1.0, 2.0 * _norm_sf(z))


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------


def f1_precision_recall(preds, truths, positive_class: int = 1) -> tuple:
    """(f1, precision, recall) for one positive class; 0/0 ratios are 0."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.size == 0:
        raise StatsError("empty input")
    if preds.shape != truths.shape:
        raise StatsError("preds and truths must have equal length")
    pp = preds == positive_class
    tp = truths == positive_class
    n_tp = int(np.sum(pp & tp))
    n_fp = int(np.sum(pp & ~tp))
    n_fn = int(np.sum(~pp & tp))
    precision = n_tp / (n_tp + n_fp) if n_tp + n_fp else 0.0
    recall = n_tp / (n_tp + n_fn) if n_tp + n_fn else 0.0
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return f1, precision, recall


def auprc(scores, truths, positive_class: int = 1) -> float:
    """Average precision: precision summed over recall steps, score ties grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    if scores.size == 0 or scores.shape != truths.shape:
        raise StatsError("scores and truths must be equal-length and non-empty")
    pos = (truths == positive_class).astype(np.int64)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise StatsError("no positive instances")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = pos[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += int(p[i:j].sum())
        seen += j - i
        d_tp = int(p[i:j].sum())
        if d_tp:
            ap += (d_tp / n_pos) * (tp / seen)
        i = j
    return ap


# ---------------------------------------------------------------------------
# Inter-rater agreement
# ---------------------------------------------------------------------------


def krippendorff_alpha(ratings, level: str = "nominal") -> float:
    """Agreement over a raters-by-items matrix; None/NaN marks missing.

    Items with fewer than two ratings are ignored. ``level`` picks the
    squared-difference function: nominal (0/1 mismatch) or interval
    ((c-k)^2). Returns 1.0 when there is no disagreement at all.
    """
    if level not in ("nominal", "interval"):
        raise StatsError(f"unknown level {level!r}")
    R = np.array([[np.nan if v is None else float(v) for v in row] for row in ratings],
                 dtype=np.float64)
    if R.ndim != 2:
        raise StatsError("ratings must be a 2-d raters-by-items matrix")
    values = np.unique(R[~np.isnan(R)])
    if values.size == 0:
        raise StatsError("no ratings present")
    v_index = {v: i for i, v in enumerate(values)}
    k = values.size
    coincidence = np.zeros((k, k))
    any_pairable = False
    for item in range(R.shape[1]):
        col = R[:, item]
        col = col[~np.isnan(col)]
        m = col.size
        if m < 2:
            continue
        any_pairable = True
        idx = np.array([v_index[v] for v in col])
        for a in range(m):
            for b in range(m):
                if a != b:
                    coincidence[idx[a], idx[b]] += 1.0 / (m - 1)
    if not any_pairable:
        raise StatsError("insufficient overlap: no item has two ratings")
    n_c = coincidence.sum(axis=1)
    n_tot = n_c.sum()
    if level == "nominal":
        delta2 = 1.0 - np.eye(k)
    else:
        delta2 = (values[:, None] - values[None, :]) ** 2
    d_obs = (coincidence * delta2).sum() / n_tot
    d_exp = (np.outer(n_c, n_c) * delta2).sum() / (n_tot * (n_tot - 1.0))
    if d_exp == 0.0:
        return 1.0
    return 1.0 - d_obs / d_exp


# ---------------------------------------------------------------------------
# Rank tests
# ---------------------------------------------------------------------------


def _u_count(x: np.ndarray, y: np.ndarray) -> float:
    """Pairs where x beats y, ties crediting half."""
    gt = np.sum(x[:, None] > y[None, :])
    eq = np.sum(x[:, None] == y[None, :])
    return float(gt) + 0.5 * float(eq)


def mann_whitney_u(x, y) -> TestResult:
    """Two-sample rank test; statistic is U of the first sample."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise StatsError("both samples must be non-empty")
    n1, n2 = x.size, y.size
    u_obs = _u_count(x, y)
    mu = n1 * n2 / 2.0
    if n1 + n2 <= MW_EXACT_MAX_N:
        pooled = np.concatenate([x, y])
        dev = abs(u_obs - mu)
        hits = 0
        total = 0
        idx = range(n1 + n2)
        for combo in itertools.combinations(idx, n1):
            mask = np.zeros(n1 + n2, dtype=bool)
            mask[list(combo)] = True
            u = _u_count(pooled[mask], pooled[~mask])
            total += 1
            if abs(u - mu) >= dev - 1e-12:
                hits += 1
        return TestResult(u_obs, hits / total, "exact_permutation", (n1, n2))
    pooled = np.concatenate([x, y])
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts)) / (n * (n - 1.0))
    sigma2 = n1 * n2 / 12.0 * ((n + 1.0) - tie_term)
    p = _two_tailed_normal(u_obs - mu, math.sqrt(sigma2))
    return TestResult(u_obs, p, "normal_approx", (n1, n2))


def wilcoxon_signed_rank(x, y) -> TestResult:
    """Paired rank test; statistic is min(T+, T-) over nonzero differences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size == 0:
        raise StatsError("paired samples must be equal-length and non-empty")
    d = x - y
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise StatsError("all paired differences are zero")
    ranks = rankdata(np.abs(d), method="average")
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    w = min(t_plus, t_minus)
    mu = n * (n + 1.0) / 4.0
    if n <= WILCOXON_EXACT_MAX_N:
        dev = abs(t_plus - mu)
        hits = 0
        for signs in itertools.product((0.0, 1.0), repeat=n):
            t = float(np.dot(signs, ranks))
            if abs(t - mu) >= dev - 1e-12:
                hits += 1
        return TestResult(w, hits / 2 ** n, "exact_permutation", (n,))
    _, counts = np.unique(np.abs(d), return_counts=True)
    sigma2 = (n * (n + 1.0) * (2.0 * n + 1.0)
              - 0.5 * float(np.sum(counts ** 3 - counts))) / 24.0
    p = _two_tailed_normal(t_plus - mu, math.sqrt(sigma2))
    return TestResult(w, p, "normal_approx", (n,))


def _jt_statistic(groups) -> float:
    jt = 0.0
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            jt += _u_count(groups[j], groups[i])
    return jt


def _jt_exact_p(groups) -> float:
    """Two-tailed exact p by enumerating value-to-group contingency tables."""
    sizes = [len(g) for g in groups]
    pooled = np.concatenate(groups)
    values, value_counts = np.unique(pooled, return_counts=True)
    n_groups = len(sizes)
    n_values = len(values)
    mu = sum(sizes[i] * sizes[j] for i in range(n_groups)
             for j in range(i + 1, n_groups)) / 2.0
    obs = _jt_statistic(groups)
    dev = abs(obs - mu)

    # pair_u[v, w] = U-credit a single item of value v earns against one of
    # value w when v sits in the later group
    pair_u = (values[:, None] > values[None, :]).astype(np.float64)
    pair_u += 0.5 * (values[:, None] == values[None, :])

    hits = 0.0
    total = 0.0
    table = np.zeros((n_groups, n_values), dtype=np.int64)
    remaining = list(sizes)

    def fill_value(v):
        nonlocal hits, total
        if v == n_values:
            weight = 1.0
            for vv in range(n_values):
                c = int(value_counts[vv])
                for g in range(n_groups):
                    weight *= math.comb(c, int(table[g, vv]))
                    c -= int(table[g, vv])
            jt = 0.0
            for i in range(n_groups):
                for j in range(i + 1, n_groups):
                    jt += float(table[j] @ pair_u @ table[i])
            total += weight
            if abs(jt - mu) >= dev - 1e-12:
                hits += weight
            return

        def split(g, left):
            if g == n_groups - 1:
                if left <= remaining[g]:
                    table[g, v] = left
                    remaining[g] -= left
                    fill_value(v + 1)
                    remaining[g] += left
                    table[g, v] = 0
                return
            for take in range(min(left, remaining[g]) + 1):
                table[g, v] = take
                remaining[g] -= take
                split(g + 1, left - take)
                remaining[g] += take
                table[g, v] = 0

        split(0, int(value_counts[v]))

    fill_value(0)
    return hits / total


def jonckheere_terpstra(groups) -> TestResult:
    """Trend test across ordered groups; statistic sums pairwise U counts."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise StatsError("need at least two ordered groups")
    if any(g.size == 0 for g in groups):
        raise StatsError("empty group")
    sizes = [g.size for g in groups]
    n = sum(sizes)
    jt = _jt_statistic(groups)
    if n <= JT_EXACT_MAX_N:
        p = _jt_exact_p(groups)
        return TestResult(jt, p, "exact_permutation", tuple(sizes))
    mu = (n * n - sum(s * s for s in sizes)) / 4.0
    pooled = np.concatenate(groups)
    _, ties = np.unique(pooled, return_counts=True)
    s_arr = np.array(sizes, dtype=np.float64)
    t_arr = ties.astype(np.float64)
    term1 = (n * (n - 1.0) * (2.0 * n + 5.0)
             - np.sum(s_arr * (s_arr - 1.0) * (2.0 * s_arr + 5.0))
             - np.sum(t_arr * (t_arr - 1.0) * (2.0 * t_arr + 5.0))) / 72.0
    term2 = (np.sum(s_arr * (s_arr - 1.0) * (s_arr - 2.0))
             * np.sum(t_arr * (t_arr - 1.0) * (t_arr - 2.0))
             / (36.0 * n * (n - 1.0) * (n - 2.0)))
    term3 = (np.sum(s_arr * (s_arr - 1.0)) * np.sum(t_arr * (t_arr - 1.0))
             / (8.0 * n * (n - 1.0)))
    sigma = math.sqrt(term1 + term2 + term3)
    p = _two_tailed_normal(jt - mu, sigma)
    return TestResult(jt, p, "normal_approx", tuple(sizes))


# ---------------------------------------------------------------------------
# Correlation and regression
# ---------------------------------------------------------------------------


def pearson_r(x, y) -> TestResult:
    """Correlation with a two-tailed t-distribution p-value (n-2 df)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise StatsError("need equal-length samples with n >= 3")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise StatsError("constant input has no defined correlation")
    r = float(dx @ dy) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    n = x.size
    if 1.0 - r * r <= 0.0:
        return TestResult(r, 0.0, "t_dist", (n,))
    t = r * math.sqrt((n - 2.0) / (1.0 - r * r))
    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return TestResult(r, min(1.0, p), "t_dist", (n,))


def fisher_z_compare(r1: float, n1: int, r2: float, n2: int) -> TestResult:
    """Difference of two independent correlations via the z transform."""
    for r in (r1, r2):
        if not -1.0 < r < 1.0:
            raise StatsError("correlations must lie strictly inside (-1, 1)")
    if n1 < 4 or n2 < 4:
        raise StatsError("need at least 4 observations per correlation")
    z = (math.atanh(r1) - math.atanh(r2)) / math.sqrt(1.0 / (n1 - 3) + 1.0 / (n2 - 3))
    p = min(1.0, 2.0 * _norm_sf(abs(z)))
    return TestResult(z, p, "normal_approx", (n1, n2))


def ols_slope(x, y) -> float:
    """Least-squares slope of y on x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise StatsError("need equal-length samples with n >= 2")
    dx = x - x.mean()
    den = float(dx @ dx)
    if den == 0.0:
        raise StatsError("constant x has no defined slope")
    return float(dx @ (y - y.mean())) / den


def results_to_json(results: dict, extra: dict | None = None) -> str:
    """Bundle named TestResults (plus optional context) into a JSON report."""
    doc = {"tests": {name: r.to_dict() for name, r in results.items()}}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2)
