"""Hot numeric kernels with numba-accelerated and pure-numpy twin implementations.

The active backend is chosen at import time: set ``EDIG_NUMBA=0`` (or ``false``)
to force the pure-numpy path; numba is also skipped automatically when it is not
importable. Both paths implement the same algorithms with the same deterministic
tie-breaking, so results are interchangeable (bit-identical for tree fitting,
within float round-off for BLAS-backed distance products).

Kernels here are the per-round cost drivers: pairwise/cross cosine distance,
average-linkage agglomerative merging, and random-forest fit/predict over flat
node arrays. Everything else in the package is plain numpy.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("EDIG_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


NUMBA_ENABLED = NUMBA_REQUESTED and NUMBA_AVAILABLE

_MASK64 = (1 << 64) - 1
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_M1 = 0xBF58476D1CE4E5B9
_SM64_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def backend() -> str:
    """Name of the kernel backend selected at import time."""
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# splitmix64 — shared deterministic RNG for tree fitting.
#
# The python-int version and the uint64 version below must produce identical
# streams; tests/test_kernels.py checks this. float conversion via the top 53
# bits keeps rand_below() exact in both paths.
# ---------------------------------------------------------------------------


def _sm64_seed_py(seed: int, stream: int) -> int:
    return (seed * 0x632BE59BD9B4E019 + stream * _SM64_GAMMA + 0x9E3779B9) & _MASK64


def _sm64_next_py(state: list) -> int:
    s = (state[0] + _SM64_GAMMA) & _MASK64
    state[0] = s
    z = s
    z = ((z ^ (z >> 30)) * _SM64_M1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM64_M2) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _rand_below_py(state: list, n: int) -> int:
    u = _sm64_next_py(state) >> 11
    return int(u * _INV_2_53 * n)


@njit(cache=True)
def _sm64_next_nb(state):
    s = state[0] + np.uint64(_SM64_GAMMA)
    state[0] = s
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_SM64_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_SM64_M2)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _rand_below_nb(state, n):
    u = _sm64_next_nb(state) >> np.uint64(11)
    return int(np.float64(u) * _INV_2_53 * n)


# ---------------------------------------------------------------------------
# Cosine distances. Zero-norm rows take distance 1 to everything (declared
# convention); self-distance on the pairwise diagonal is forced to 0 because
# downstream clustering ignores it.
# ---------------------------------------------------------------------------


def _py_pairwise_cosine(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    norms = np.sqrt((X * X).sum(axis=1))
    ok = norms > 0.0
    Xn = np.zeros_like(X)
    Xn[ok] = X[ok] / norms[ok, None]
    D = 1.0 - Xn @ Xn.T
    D[~ok, :] = 1.0
    D[:, ~ok] = 1.0
    np.clip(D, 0.0, 2.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


@njit(cache=True)
def _nb_pairwise_cosine(X):
    n, d = X.shape
    norms = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += X[i, k] * X[i, k]
        norms[i] = np.sqrt(s)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if norms[i] == 0.0 or norms[j] == 0.0:
                dist = 1.0
            else:
                dot = 0.0
                for k in range(d):
                    dot += X[i, k] * X[j, k]
                dist = 1.0 - dot / (norms[i] * norms[j])
                if dist < 0.0:
                    dist = 0.0
                elif dist > 2.0:
                    dist = 2.0
            D[i, j] = dist
            D[j, i] = dist
    return D


def _py_cross_cosine(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    na = np.sqrt((A * A).sum(axis=1))
    nb = np.sqrt((B * B).sum(axis=1))
    oka = na > 0.0
    okb = nb > 0.0
    An = np.zeros_like(A)
    An[oka] = A[oka] / na[oka, None]
    Bn = np.zeros_like(B)
    Bn[okb] = B[okb] / nb[okb, None]
    D = 1.0 - An @ Bn.T
    D[~oka, :] = 1.0
    D[:, ~okb] = 1.0
    np.clip(D, 0.0, 2.0, out=D)
    return D


@njit(cache=True)
def _nb_cross_cosine(A, B):
    m, d = A.shape
    n = B.shape[0]
    na = np.empty(m)
    for i in range(m):
        s = 0.0
        for k in range(d):
            s += A[i, k] * A[i, k]
        na[i] = np.sqrt(s)
    nb = np.empty(n)
    for j in range(n):
        s = 0.0
        for k in range(d):
            s += B[j, k] * B[j, k]
        nb[j] = np.sqrt(s)
    D = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            if na[i] == 0.0 or nb[j] == 0.0:
                D[i, j] = 1.0
            else:
                dot = 0.0
                for k in range(d):
                    dot += A[i, k] * B[j, k]
                dist = 1.0 - dot / (na[i] * nb[j])
                if dist < 0.0:
                    dist = 0.0
                elif dist > 2.0:
                    dist = 2.0
                D[i, j] = dist
    return D


# ---------------------------------------------------------------------------
# Average-linkage agglomerative merging over a precomputed distance matrix.
#
# Row-min caches keep the merge loop near O(n^2). Ties break to the lowest
# (row, col) pair; merged clusters live at the lower slot index so cluster
# labels stay deterministic under the canonical input ordering.
# ---------------------------------------------------------------------------


def _py_average_linkage(D: np.ndarray, k: int) -> np.ndarray:
    n = D.shape[0]
    labels = np.arange(n, dtype=np.int64)
    if k >= n:
        return labels
    W = D.astype(np.float64, copy=True)
    np.fill_diagonal(W, np.inf)
    sizes = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    row_val = W.min(axis=1)
    row_idx = W.argmin(axis=1).astype(np.int64)
    n_active = n
    while n_active > k:
        a = int(np.argmin(row_val))
        b = int(row_idx[a])
        # Lance-Williams average-linkage update into slot a
        sa, sb = sizes[a], sizes[b]
        new_row = (sa * W[a] + sb * W[b]) / (sa + sb)
        W[a, :] = new_row
        W[:, a] = new_row
        W[a, a] = np.inf
        W[b, :] = np.inf
        W[:, b] = np.inf
        active[b] = False
        sizes[a] = sa + sb
        labels[labels == b] = a
        row_val[b] = np.inf
        row_idx[b] = -1
        row_val[a] = W[a].min()
        row_idx[a] = int(W[a].argmin())
        stale = active.copy()
        stale[a] = False
        hit = stale & ((row_idx == a) | (row_idx == b))
        for j in np.nonzero(hit)[0]:
            row_val[j] = W[j].min()
            row_idx[j] = int(W[j].argmin())
        rest = np.nonzero(stale & ~hit)[0]
        if rest.size:
            better = (W[rest, a] < row_val[rest]) | (
                (W[rest, a] == row_val[rest]) & (a < row_idx[rest])
            )
            upd = rest[better]
            row_val[upd] = W[upd, a]
            row_idx[upd] = a
        n_active -= 1
    return labels


@njit(cache=True)
def _nb_average_linkage(D, k):
    n = D.shape[0]
    labels = np.arange(n)
    if k >= n:
        return labels
    W = D.copy()
    for i in range(n):
        W[i, i] = np.inf
    sizes = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=np.bool_)
    row_val = np.empty(n)
    row_idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        bj = -1
        for j in range(n):
            if W[i, j] < best:
                best = W[i, j]
                bj = j
        row_val[i] = best
        row_idx[i] = bj
    n_active = n
    while n_active > k:
        best = np.inf
        a = -1
        for i in range(n):
            if active[i] and row_val[i] < best:
                best = row_val[i]
                a = i
        b = row_idx[a]
        sa = sizes[a]
        sb = sizes[b]
        for j in range(n):
            if active[j] and j != a and j != b:
                v = (sa * W[a, j] + sb * W[b, j]) / (sa + sb)
                W[a, j] = v
                W[j, a] = v
        W[a, a] = np.inf
        for j in range(n):
            W[b, j] = np.inf
            W[j, b] = np.inf
        active[b] = False
        sizes[a] = sa + sb
        for p in range(n):
            if labels[p] == b:
                labels[p] = a
        row_val[b] = np.inf
        row_idx[b] = -1
        bv = np.inf
        bj = -1
        for j in range(n):
            if W[a, j] < bv:
                bv = W[a, j]
                bj = j
        row_val[a] = bv
        row_idx[a] = bj
        for j in range(n):
            if not active[j] or j == a:
                continue
            if row_idx[j] == a or row_idx[j] == b:
                bv = np.inf
                bj = -1
                for c in range(n):
                    if W[j, c] < bv:
                        bv = W[j, c]
                        bj = c
                row_val[j] = bv
                row_idx[j] = bj
            else:
                v = W[j, a]
                if v < row_val[j] or (v == row_val[j] and a < row_idx[j]):
                    row_val[j] = v
                    row_idx[j] = a
        n_active -= 1
    return labels


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber cluster slots to 0..k-1 in order of first appearance."""
    out = np.empty_like(labels)
    seen: dict = {}
    for i, lab in enumerate(labels):
        lab = int(lab)
        if lab not in seen:
            seen[lab] = len(seen)
        out[i] = seen[lab]
    return out


# ---------------------------------------------------------------------------
# Random forest over flat node arrays.
#
# Trees are built depth-first with an explicit stack; feature subsets come from
# the shared splitmix64 stream (bootstrap draws first, then d_sub draws per
# split attempt), so the numba and numpy paths consume identical randomness and
# grow bit-identical trees. Costs are Gini; ties break to the earliest
# (feature, threshold) in scan order.
# ---------------------------------------------------------------------------

_LEAF = -1


def _tree_capacity(n: int) -> int:
    return 2 * n + 1


@njit(cache=True)
def _nb_fit_tree(X, y, n_classes, max_depth, min_leaf, d_sub, bootstrap, state,
                 feature, threshold, left, right, counts):
    n, d = X.shape
    samp = np.empty(n, dtype=np.int64)
    if bootstrap:
        for i in range(n):
            u = _sm64_next_nb(state) >> np.uint64(11)
            samp[i] = int(np.float64(u) * _INV_2_53 * n)
    else:
        for i in range(n):
            samp[i] = i
    feat_pool = np.empty(d, dtype=np.int64)
    # stack rows: node_id, start, end, depth
    stack = np.empty((2 * n + 2, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        for c in range(n_classes):
            counts[node, c] = 0.0
        for i in range(start, end):
            counts[node, y[samp[i]]] += 1.0
        pure = False
        for c in range(n_classes):
            if counts[node, c] == m:
                pure = True
        if depth >= max_depth or m < 2 * min_leaf or pure:
            feature[node] = _LEAF
            continue
        for j in range(d):
            feat_pool[j] = j
        if d_sub < d:  # full pool keeps natural scan order (deterministic tree)
            for j in range(d_sub):
                u = _sm64_next_nb(state) >> np.uint64(11)
                pick = j + int(np.float64(u) * _INV_2_53 * (d - j))
                tmp = feat_pool[j]
                feat_pool[j] = feat_pool[pick]
                feat_pool[pick] = tmp
        best_cost = np.inf
        best_f = -1
        best_thr = 0.0
        cl = np.empty(n_classes)
        for jj in range(d_sub):
            f = feat_pool[jj]
            vals = np.empty(m)
            for i in range(m):
                vals[i] = X[samp[start + i], f]
            order = np.argsort(vals)
            for c in range(n_classes):
                cl[c] = 0.0
            for i in range(m - 1):
                cl[y[samp[start + order[i]]]] += 1.0
                v = vals[order[i]]
                v_next = vals[order[i + 1]]
                if v == v_next:
                    continue
                n_l = i + 1
                n_r = m - n_l
                if n_l < min_leaf or n_r < min_leaf:
                    continue
                gl = 1.0
                gr = 1.0
                for c in range(n_classes):
                    pl = cl[c] / n_l
                    gl -= pl * pl
                    pr = (counts[node, c] - cl[c]) / n_r
                    gr -= pr * pr
                cost = (n_l * gl + n_r * gr) / m
                if cost < best_cost:
                    best_cost = cost
                    best_f = f
                    thr = (v + v_next) * 0.5
                    if not (thr < v_next):
                        thr = v
                    best_thr = thr
        if best_f < 0:
            feature[node] = _LEAF
            continue
        # in-place partition by the chosen split
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[samp[lo], best_f] <= best_thr:
                lo += 1
            else:
                tmp = samp[lo]
                samp[lo] = samp[hi]
                samp[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        stack[top, 0] = rid
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lid
        stack[top, 1] = start
        stack[top, 2] = lo
        stack[top, 3] = depth + 1
        top += 1
    return n_nodes


@njit(cache=True)
def _nb_fit_forest(X, y, n_classes, n_trees, max_depth, min_leaf, d_sub, bootstrap, seed):
    n = X.shape[0]
    cap = 2 * n + 1
    features = np.full((n_trees, cap), _LEAF, dtype=np.int64)
    thresholds = np.zeros((n_trees, cap))
    lefts = np.zeros((n_trees, cap), dtype=np.int64)
    rights = np.zeros((n_trees, cap), dtype=np.int64)
    counts = np.zeros((n_trees, cap, n_classes))
    n_nodes = np.empty(n_trees, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    for t in range(n_trees):
        s = np.uint64(seed) * np.uint64(0x632BE59BD9B4E019)
        s = s + np.uint64(t) * np.uint64(_SM64_GAMMA)
        state[0] = s + np.uint64(0x9E3779B9)
        n_nodes[t] = _nb_fit_tree(
            X, y, n_classes, max_depth, min_leaf, d_sub, bootstrap, state,
            features[t], thresholds[t], lefts[t], rights[t], counts[t],
        )
    return features, thresholds, lefts, rights, counts, n_nodes


@njit(cache=True)
def _nb_forest_predict(features, thresholds, lefts, rights, counts, Xq):
    n_trees = features.shape[0]
    mq = Xq.shape[0]
    n_classes = counts.shape[2]
    probs = np.zeros((mq, n_classes))
    for t in range(n_trees):
        for i in range(mq):
            node = 0
            while features[t, node] != _LEAF:
                if Xq[i, features[t, node]] <= thresholds[t, node]:
                    node = lefts[t, node]
                else:
                    node = rights[t, node]
            tot = 0.0
            for c in range(n_classes):
                tot += counts[t, node, c]
            for c in range(n_classes):
                probs[i, c] += counts[t, node, c] / tot
    return probs / n_trees


def _py_fit_tree(X, y, n_classes, max_depth, min_leaf, d_sub, bootstrap, state,
                 feature, threshold, left, right, counts):
    n, d = X.shape
    if bootstrap:
        samp = np.array([_rand_below_py(state, n) for _ in range(n)], dtype=np.int64)
    else:
        samp = np.arange(n, dtype=np.int64)
    stack = [(0, 0, n, 0)]
    n_nodes = 1
    while stack:
        node, start, end, depth = stack.pop()
        m = end - start
        ys = y[samp[start:end]]
        cnt = np.bincount(ys, minlength=n_classes).astype(np.float64)
        counts[node, :] = cnt
        if depth >= max_depth or m < 2 * min_leaf or cnt.max() == m:
            feature[node] = _LEAF
            continue
        pool = np.arange(d, dtype=np.int64)
        if d_sub < d:
            for j in range(d_sub):
                pick = j + _rand_below_py(state, d - j)
                pool[j], pool[pick] = pool[pick], pool[j]
        best_cost = np.inf
        best_f = -1
        best_thr = 0.0
        for f in pool[:d_sub]:
            vals = X[samp[start:end], f]
            order = np.argsort(vals)
            sv = vals[order]
            onehot = np.zeros((m, n_classes))
            onehot[np.arange(m), ys[order]] = 1.0
            cl = np.cumsum(onehot[:-1], axis=0)  # left counts at each boundary
            n_l = np.arange(1, m, dtype=np.float64)
            n_r = m - n_l
            valid = (sv[:-1] != sv[1:]) & (n_l >= min_leaf) & (n_r >= min_leaf)
            if not valid.any():
                continue
            gl = np.ones(m - 1)
            gr = np.ones(m - 1)
            for c in range(n_classes):  # sequential per class: matches loop order
                pl = cl[:, c] / n_l
                gl -= pl * pl
                pr = (cnt[c] - cl[:, c]) / n_r
                gr -= pr * pr
            cost = (n_l * gl + n_r * gr) / m
            cost[~valid] = np.inf
            i = int(np.argmin(cost))
            if cost[i] < best_cost:
                best_cost = cost[i]
                best_f = int(f)
                thr = (sv[i] + sv[i + 1]) * 0.5
                if not (thr < sv[i + 1]):
                    thr = sv[i]
                best_thr = thr
        if best_f < 0:
            feature[node] = _LEAF
            continue
        seg = samp[start:end]
        go_left = X[seg, best_f] <= best_thr
        samp[start:end] = np.concatenate([seg[go_left], seg[~go_left]])
        lo = start + int(go_left.sum())
        feature[node] = best_f
        threshold[node] = best_thr
        lid, rid = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        stack.append((rid, lo, end, depth + 1))
        stack.append((lid, start, lo, depth + 1))
    return n_nodes


def _py_fit_forest(X, y, n_classes, n_trees, max_depth, min_leaf, d_sub, bootstrap, seed):
    n = X.shape[0]
    cap = _tree_capacity(n)
    features = np.full((n_trees, cap), _LEAF, dtype=np.int64)
    thresholds = np.zeros((n_trees, cap))
    lefts = np.zeros((n_trees, cap), dtype=np.int64)
    rights = np.zeros((n_trees, cap), dtype=np.int64)
    counts = np.zeros((n_trees, cap, n_classes))
    n_nodes = np.empty(n_trees, dtype=np.int64)
    for t in range(n_trees):
        state = [_sm64_seed_py(seed, t)]
        n_nodes[t] = _py_fit_tree(
            X, y, n_classes, max_depth, min_leaf, d_sub, bootstrap, state,
            features[t], thresholds[t], lefts[t], rights[t], counts[t],
        )
    return features, thresholds, lefts, rights, counts, n_nodes


def _py_forest_predict(features, thresholds, lefts, rights, counts, Xq):
    n_trees = features.shape[0]
    mq = Xq.shape[0]
    n_classes = counts.shape[2]
    probs = np.zeros((mq, n_classes))
    for t in range(n_trees):
        nodes = np.zeros(mq, dtype=np.int64)
        f = features[t, nodes]
        while True:
            internal = f != _LEAF
            if not internal.any():
                break
            idx = np.nonzero(internal)[0]
            cur = nodes[idx]
            go_left = Xq[idx, features[t, cur]] <= thresholds[t, cur]
            nodes[idx] = np.where(go_left, lefts[t, cur], rights[t, cur])
            f = features[t, nodes]
        leaf_counts = counts[t, nodes, :]
        tot = leaf_counts.sum(axis=1)  # integer-valued: exact in any order
        probs += leaf_counts / tot[:, None]
    return probs / n_trees


# ---------------------------------------------------------------------------
# Backend dispatch. IMPLEMENTATIONS keeps both paths importable for the parity
# tests and the benchmark; the bare names are what the package uses.
# ---------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "numpy": {
        "pairwise_cosine": _py_pairwise_cosine,
        "cross_cosine": _py_cross_cosine,
        "average_linkage": lambda D, k: _canonical_labels(_py_average_linkage(D, k)),
        "fit_forest": _py_fit_forest,
        "forest_predict": _py_forest_predict,
    },
}

if NUMBA_AVAILABLE:
    IMPLEMENTATIONS["numba"] = {
        "pairwise_cosine": _nb_pairwise_cosine,
        "cross_cosine": _nb_cross_cosine,
        "average_linkage": lambda D, k: _canonical_labels(_nb_average_linkage(D, k)),
        "fit_forest": _nb_fit_forest,
        "forest_predict": _nb_forest_predict,
    }

_active = IMPLEMENTATIONS[backend()]
pairwise_cosine = _active["pairwise_cosine"]
cross_cosine = _active["cross_cosine"]
average_linkage = _active["average_linkage"]
fit_forest = _active["fit_forest"]
forest_predict = _active["forest_predict"]
