"""Statistics module tests.

The rank tests are checked against brute-force enumeration oracles written
here from first principles: every group assignment (Mann-Whitney), every
sign vector (Wilcoxon), every ordered partition (trend test). Oracles are
deliberately separate code paths from the implementations, sharing only
the published conventions (0.5 tie credit, two-tailed deviation counting).
"""

import itertools
import math

import numpy as np
import pytest
import scipy.stats

from edig import stats
from edig.stats import (StatsError, auprc, f1_precision_recall, fisher_z_compare,
                        jonckheere_terpstra, krippendorff_alpha, mann_whitney_u,
                        ols_slope, pearson_r, wilcoxon_signed_rank)

# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def bf_u_count(x, y):
    u = 0.0
    for a in x:
        for b in y:
            if a > b:
                u += 1.0
            elif a == b:
                u += 0.5
    return u


def bf_mann_whitney(x, y):
    """U of x plus exact two-tailed p over all C(n, n1) label assignments."""
    n1, n2 = len(x), len(y)
    pooled = list(x) + list(y)
    mu = n1 * n2 / 2.0
    u_obs = bf_u_count(x, y)
    dev = abs(u_obs - mu)
    hits = total = 0
    for combo in itertools.combinations(range(n1 + n2), n1):
        chosen = set(combo)
        xs = [pooled[i] for i in range(n1 + n2) if i in chosen]
        ys = [pooled[i] for i in range(n1 + n2) if i not in chosen]
        total += 1
        if abs(bf_u_count(xs, ys) - mu) >= dev - 1e-12:
            hits += 1
    return u_obs, hits / total


def bf_average_ranks(values):
    """Mean ranks computed by explicit tie-block averaging."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and values[order[j]] == values[order[i]]:
            j += 1
        avg = (i + 1 + j) / 2.0  # mean of ranks i+1 .. j
        for k in range(i, j):
            ranks[order[k]] = avg
        i = j
    return ranks


def bf_wilcoxon(x, y):
    """min(T+, T-) plus exact two-tailed p over all 2^n sign vectors."""
    d = [a - b for a, b in zip(x, y) if a != b]
    if not d:
        return None
    ranks = bf_average_ranks([abs(v) for v in d])
    t_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    t_minus = sum(r for r, v in zip(ranks, d) if v < 0)
    n = len(d)
    mu = n * (n + 1) / 4.0
    dev = abs(t_plus - mu)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        t = sum(r for r, s in zip(ranks, signs) if s)
        if abs(t - mu) >= dev - 1e-12:
            hits += 1
    return min(t_plus, t_minus), hits / 2 ** n


def bf_jt_statistic(groups):
    jt = 0.0
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            jt += bf_u_count(groups[j], groups[i])
    return jt


def _ordered_partitions(indices, sizes):
    """Every way to deal ``indices`` into consecutive groups of the given
    sizes; each has equal probability under the permutation null because
    within-group order never matters."""
    if not sizes:
        yield []
        return
    head, rest = sizes[0], sizes[1:]
    for combo in itertools.combinations(indices, head):
        chosen = set(combo)
        remaining = tuple(i for i in indices if i not in chosen)
        for tail in _ordered_partitions(remaining, rest):
            yield [list(combo)] + tail


def bf_jt(groups):
    """Trend statistic plus exact two-tailed p over all ordered partitions."""
    sizes = [len(g) for g in groups]
    pooled = [v for g in groups for v in g]
    mu = sum(sizes[i] * sizes[j]
             for i in range(len(sizes)) for j in range(i + 1, len(sizes))) / 2.0
    obs = bf_jt_statistic(groups)
    dev = abs(obs - mu)
    hits = total = 0
    for part in _ordered_partitions(tuple(range(len(pooled))), sizes):
        gs = [[pooled[i] for i in block] for block in part]
        total += 1
        if abs(bf_jt_statistic(gs) - mu) >= dev - 1e-12:
            hits += 1
    return obs, hits / total


def bf_krippendorff(ratings, level):
    """Coincidence-matrix agreement from unordered within-unit pairs."""
    units = []
    for item in range(len(ratings[0])):
        col = [row[item] for row in ratings if row[item] is not None]
        if len(col) >= 2:
            units.append(col)
    values = sorted({v for col in units for v in col})
    vi = {v: i for i, v in enumerate(values)}
    k = len(values)
    o = [[0.0] * k for _ in range(k)]
    for col in units:
        m = len(col)
        for a, b in itertools.combinations(range(m), 2):
            ca, cb = vi[col[a]], vi[col[b]]
            o[ca][cb] += 1.0 / (m - 1)  # each unordered pair, both ways
            o[cb][ca] += 1.0 / (m - 1)
    n_c = [sum(o[c]) for c in range(k)]
    n_tot = sum(n_c)

    def d2(a, b):
        if level == "nominal":
            return 0.0 if a == b else 1.0
        return (values[a] - values[b]) ** 2

    d_obs = sum(o[a][b] * d2(a, b) for a in range(k) for b in range(k)) / n_tot
    d_exp = sum(n_c[a] * n_c[b] * d2(a, b)
                for a in range(k) for b in range(k)) / (n_tot * (n_tot - 1.0))
    if d_exp == 0.0:
        return 1.0
    return 1.0 - d_obs / d_exp


def bf_average_precision(scores, truths, positive_class=1):
    """AP from the thresholded P/R step function, O(n^2) by intention."""
    thresholds = sorted(set(scores), reverse=True)
    n_pos = sum(1 for t in truths if t == positive_class)
    ap = 0.0
    prev_recall = 0.0
    for th in thresholds:
        tp = sum(1 for s, t in zip(scores, truths)
                 if s >= th and t == positive_class)
        pp = sum(1 for s in scores if s >= th)
        precision = tp / pp
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


# ---------------------------------------------------------------------------
# Micro-case corpus: >= 200 random small inputs with heavy ties
# ---------------------------------------------------------------------------


def _micro_corpus():
    rng = np.random.default_rng(90210)
    cases = {"mw": [], "wx": [], "jt": []}
    while len(cases["mw"]) < 80:
        n1 = int(rng.integers(1, 5))
        n2 = int(rng.integers(1, 5))
        if n1 + n2 > 8:
            continue
        x = rng.integers(0, 4, n1).astype(float)
        y = rng.integers(0, 4, n2).astype(float)
        if rng.random() < 0.3:  # mix in non-integer values
            x = x + 0.5
        cases["mw"].append((list(x), list(y)))
    while len(cases["wx"]) < 70:
        n = int(rng.integers(2, 9))
        x = rng.integers(0, 5, n).astype(float)
        y = rng.integers(0, 5, n).astype(float)
        if all(a == b for a, b in zip(x, y)):
            continue
        cases["wx"].append((list(x), list(y)))
    while len(cases["jt"]) < 60:
        n_groups = int(rng.integers(2, 5))
        sizes = [int(rng.integers(1, 4)) for _ in range(n_groups)]
        if sum(sizes) > 8:
            continue
        groups = [list(rng.integers(0, 4, s).astype(float)) for s in sizes]
        cases["jt"].append(groups)
    return cases


CORPUS = _micro_corpus()


def test_corpus_size_meets_contract():
    assert sum(len(v) for v in CORPUS.values()) >= 200


def test_mann_whitney_matches_enumeration_oracle():
    for x, y in CORPUS["mw"]:
        u_ref, p_ref = bf_mann_whitney(x, y)
        res = mann_whitney_u(x, y)
        assert res.statistic == u_ref, (x, y)
        assert abs(res.p_value - p_ref) < 1e-12, (x, y)
        assert res.method == "exact_permutation"
        assert res.n == (len(x), len(y))


def test_wilcoxon_matches_enumeration_oracle():
    for x, y in CORPUS["wx"]:
        ref = bf_wilcoxon(x, y)
        if ref is None:
            with pytest.raises(StatsError):
                wilcoxon_signed_rank(x, y)
            continue
        w_ref, p_ref = ref
        res = wilcoxon_signed_rank(x, y)
        assert res.statistic == w_ref, (x, y)
        assert abs(res.p_value - p_ref) < 1e-12, (x, y)
        assert res.method == "exact_permutation"


def test_trend_test_matches_enumeration_oracle():
    for groups in CORPUS["jt"]:
        jt_ref, p_ref = bf_jt(groups)
        res = jonckheere_terpstra(groups)
        assert res.statistic == jt_ref, groups
        assert abs(res.p_value - p_ref) < 1e-12, groups
        assert res.method == "exact_permutation"


def test_krippendorff_matches_hand_oracle():
    rng = np.random.default_rng(4096)
    checked = 0
    while checked < 50:
        raters = int(rng.integers(2, 5))
        items = int(rng.integers(3, 8))
        level = "nominal" if rng.random() < 0.5 else "interval"
        R = []
        for _ in range(raters):
            row = []
            for _ in range(items):
                if rng.random() < 0.2:
                    row.append(None)
                else:
                    row.append(int(rng.integers(0, 4)))
            R.append(row)
        cols_ok = sum(
            1 for j in range(items)
            if sum(1 for i in range(raters) if R[i][j] is not None) >= 2)
        if cols_ok == 0:
            continue
        ref = bf_krippendorff(R, level)
        got = krippendorff_alpha(R, level)
        assert abs(got - ref) < 1e-9, (R, level)
        checked += 1
    assert checked == 50


# ---------------------------------------------------------------------------
# Large-sample branches against scipy and Monte-Carlo
# ---------------------------------------------------------------------------


def test_mann_whitney_normal_branch_matches_scipy():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n1 = int(rng.integers(8, 20))
        n2 = int(rng.integers(8, 20))
        x = rng.integers(0, 6, n1).astype(float)
        y = rng.integers(0, 6, n2).astype(float)
        res = mann_whitney_u(x, y)
        assert res.method == "normal_approx"
        ref = scipy.stats.mannwhitneyu(x, y, alternative="two-sided",
                                       method="asymptotic", use_continuity=True)
        assert res.statistic == ref.statistic
        assert abs(res.p_value - ref.pvalue) < 1e-10


def test_wilcoxon_normal_branch_matches_scipy():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(14, 30))
        x = rng.integers(0, 8, n).astype(float)
        y = rng.integers(0, 8, n).astype(float)
        d = x - y
        if np.count_nonzero(d) <= stats.WILCOXON_EXACT_MAX_N:
            continue
        res = wilcoxon_signed_rank(x, y)
        assert res.method == "normal_approx"
        ref = scipy.stats.wilcoxon(x, y, zero_method="wilcox", correction=True,
                                   method="approx")
        assert res.statistic == ref.statistic
        assert abs(res.p_value - ref.pvalue) < 1e-10


def test_trend_test_normal_branch_against_monte_carlo():
    rng = np.random.default_rng(9)
    groups = [list(rng.normal(m, 1.0, 10)) for m in (0.0, 0.4, 0.8)]
    res = jonckheere_terpstra(groups)
    assert res.method == "normal_approx"

    pooled = np.concatenate(groups)
    sizes = [len(g) for g in groups]
    mu = sum(sizes[i] * sizes[j]
             for i in range(3) for j in range(i + 1, 3)) / 2.0
    dev = abs(res.statistic - mu)
    hits = 0
    n_mc = 40000
    for _ in range(n_mc):
        perm = rng.permutation(pooled)
        gs = []
        at = 0
        for s in sizes:
            gs.append(perm[at:at + s])
            at += s
        if abs(bf_jt_statistic(gs) - mu) >= dev - 1e-12:
            hits += 1
    p_mc = hits / n_mc
    assert abs(res.p_value - p_mc) < 0.015, (res.p_value, p_mc)


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------


def test_f1_precision_recall_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(5, 40))
        preds = rng.integers(0, 2, n)
        truths = rng.integers(0, 2, n)
        tp = int(np.sum((preds == 1) & (truths == 1)))
        fp = int(np.sum((preds == 1) & (truths == 0)))
        fn = int(np.sum((preds == 0) & (truths == 1)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        got_f1, got_p, got_r = f1_precision_recall(preds, truths, 1)
        assert abs(got_f1 - f1) < 1e-12
        assert abs(got_p - prec) < 1e-12
        assert abs(got_r - rec) < 1e-12


def test_average_precision_matches_step_oracle():
    rng = np.random.default_rng(12)
    for _ in range(40):
        n = int(rng.integers(4, 30))
        scores = list(rng.integers(0, 6, n).astype(float))  # many ties
        truths = list(rng.integers(0, 2, n))
        if sum(truths) == 0:
            continue
        ref = bf_average_precision(scores, truths)
        got = auprc(scores, truths)
        assert abs(got - ref) < 1e-12, (scores, truths)


def test_average_precision_extremes():
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    # all scores tied: precision equals prevalence at the single step
    assert abs(auprc([0.5] * 8, [1, 0, 0, 0, 1, 0, 0, 0]) - 0.25) < 1e-12
    with pytest.raises(StatsError):
        auprc([0.1, 0.2], [0, 0])


def test_random_scorer_average_precision_near_prevalence():
    rng = np.random.default_rng(13)
    n = 10000
    truths = (rng.random(n) < 0.3).astype(int)
    scores = rng.random(n)
    prevalence = truths.mean()
    got = auprc(scores, truths)
    assert abs(got - prevalence) < 0.03


# ---------------------------------------------------------------------------
# Correlation, regression, comparisons
# ---------------------------------------------------------------------------


def test_pearson_matches_scipy():
    rng = np.random.default_rng(14)
    for _ in range(20):
        n = int(rng.integers(5, 50))
        x = rng.normal(0, 1, n)
        y = 0.5 * x + rng.normal(0, 1, n)
        res = pearson_r(x, y)
        ref = scipy.stats.pearsonr(x, y)
        assert abs(res.statistic - ref.statistic) < 1e-12
        assert abs(res.p_value - ref.pvalue) < 1e-9
        assert res.method == "t_dist"


def test_pearson_degenerate_inputs():
    res = pearson_r([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0])
    assert abs(res.statistic - 1.0) < 1e-12
    assert res.p_value < 1e-12
    with pytest.raises(StatsError):
        pearson_r([1.0, 1.0, 1.0], [2.0, 3.0, 4.0])


def test_two_correlation_comparison_recovers_known_z():
    res = fisher_z_compare(0.33, 10, -0.60, 10)
    assert abs(res.statistic - 1.938) < 5e-3
    assert abs(res.p_value - 0.052) < 2e-3
    z = (math.atanh(0.33) - math.atanh(-0.60)) / math.sqrt(1 / 7 + 1 / 7)
    assert abs(res.statistic - z) < 1e-12
    assert abs(res.p_value - 2 * scipy.stats.norm.sf(abs(z))) < 1e-12


def test_ols_slope_matches_polyfit():
    rng = np.random.default_rng(15)
    for _ in range(10):
        n = int(rng.integers(3, 30))
        x = rng.normal(0, 2, n)
        y = 1.7 * x + rng.normal(0, 0.5, n)
        if np.ptp(x) == 0:
            continue
        assert abs(ols_slope(x, y) - np.polyfit(x, y, 1)[0]) < 1e-10
    with pytest.raises(StatsError):
        ols_slope([1.0, 1.0], [2.0, 3.0])


# ---------------------------------------------------------------------------
# Structural properties
# ---------------------------------------------------------------------------


def test_mann_whitney_swap_symmetry():
    rng = np.random.default_rng(16)
    for _ in range(30):
        x = list(rng.integers(0, 5, int(rng.integers(1, 5))).astype(float))
        y = list(rng.integers(0, 5, int(rng.integers(1, 5))).astype(float))
        a = mann_whitney_u(x, y)
        b = mann_whitney_u(y, x)
        assert abs(a.statistic + b.statistic - len(x) * len(y)) < 1e-12
        assert abs(a.p_value - b.p_value) < 1e-12


def test_wilcoxon_swap_symmetry():
    rng = np.random.default_rng(17)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        x = list(rng.integers(0, 5, n).astype(float))
        y = list(rng.integers(0, 5, n).astype(float))
        if all(a == b for a, b in zip(x, y)):
            continue
        a = wilcoxon_signed_rank(x, y)
        b = wilcoxon_signed_rank(y, x)
        assert a.statistic == b.statistic
        assert abs(a.p_value - b.p_value) < 1e-12


def test_trend_test_reversal_symmetry():
    rng = np.random.default_rng(18)
    for _ in range(20):
        k = int(rng.integers(2, 4))
        groups = [list(rng.integers(0, 4, int(rng.integers(1, 4))).astype(float))
                  for _ in range(k)]
        a = jonckheere_terpstra(groups)
        b = jonckheere_terpstra(groups[::-1])
        sizes = [len(g) for g in groups]
        pairs = sum(sizes[i] * sizes[j]
                    for i in range(k) for j in range(i + 1, k))
        assert abs(a.statistic + b.statistic - pairs) < 1e-12
        assert abs(a.p_value - b.p_value) < 1e-12


def test_krippendorff_structure():
    R = [[0, 1, 2, 0], [0, 1, 2, 0], [0, 1, 2, 0]]
    assert krippendorff_alpha(R, "nominal") == 1.0
    assert krippendorff_alpha(R, "interval") == 1.0
    # single shared value everywhere: no expected disagreement either
    assert krippendorff_alpha([[1, 1], [1, 1]], "nominal") == 1.0
    # rater permutation invariance
    rng = np.random.default_rng(19)
    R = [[int(rng.integers(0, 3)) for _ in range(6)] for _ in range(4)]
    a = krippendorff_alpha(R, "interval")
    b = krippendorff_alpha(R[::-1], "interval")
    assert abs(a - b) < 1e-12
    with pytest.raises(StatsError):
        krippendorff_alpha([[1, None], [None, 2]], "nominal")
    with pytest.raises(StatsError):
        krippendorff_alpha(R, "ordinal")


def test_errors_and_result_shape():
    with pytest.raises(StatsError):
        mann_whitney_u([], [1.0])
    with pytest.raises(StatsError):
        wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(StatsError):
        jonckheere_terpstra([[1.0]])
    res = mann_whitney_u([1.0, 2.0], [3.0])
    assert res.tails == "two"
    assert set(res.to_dict()) == {"statistic", "p_value", "method", "n", "tails"}


def test_results_to_json_bundle():
    import json
    res = {"final": mann_whitney_u([1.0, 2.0, 5.0], [2.0, 3.0])}
    doc = json.loads(stats.results_to_json(res, extra={"note": "x"}))
    assert doc["tests"]["final"]["method"] == "exact_permutation"
    assert doc["note"] == "x"
