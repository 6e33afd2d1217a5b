"""Random-forest regression built on a histogram CART kernel.

Trees are grown depth-first on bin-quantized features (exact when a column has
at most 255 distinct values, quantile-binned otherwise). Splits minimize the
sum of squared errors; ties are broken toward the lowest feature index and
then the lowest threshold, so fitting is fully deterministic given the seed.
The same kernel powers the classifier ensembles in :mod:`.reward_models`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .util import child_rng

_MAX_BINS = 256  # bins per feature, i.e. at most 255 cut points


def _make_cuts(col: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sorted cut values for one column; bin(x) = #{cuts < x}."""
    uniq = np.unique(col)
    if uniq.size <= _MAX_BINS:
        if uniq.size == 1:
            return np.empty(0, dtype=np.float64)
        cuts = (uniq[:-1] + uniq[1:]) * 0.5
        # A midpoint of two adjacent doubles can round up to the larger one,
        # which would merge the two values into one bin; fall back to the
        # smaller value (the rule "x <= cut goes left" stays exact).
        bad = ~((cuts >= uniq[:-1]) & (cuts < uniq[1:]))
        cuts[bad] = uniq[:-1][bad]
        return cuts
    grid = np.linspace(0.0, 1.0, _MAX_BINS + 1)[1:-1]
    return np.unique(np.quantile(col, grid))


def bin_matrix(X: NDArray[np.float64]) -> tuple[NDArray[np.uint8], list[NDArray[np.float64]], NDArray[np.int64]]:
    """Quantize columns of X. Returns (binned (d, n), per-column cuts, bins per column)."""
    n, d = X.shape
    cuts = [_make_cuts(X[:, j]) for j in range(d)]
    binned = np.empty((d, n), dtype=np.uint8)
    n_bins = np.empty(d, dtype=np.int64)
    for j in range(d):
        binned[j] = np.searchsorted(cuts[j], X[:, j], side="left").astype(np.uint8)
        n_bins[j] = cuts[j].size + 1
    return binned, cuts, n_bins


@njit(cache=True, nogil=True)
def _build_tree(xb, y, samp, max_depth, min_split, min_leaf, k_feat, rng_state, n_bins):
    """Grow one tree on binned data; returns compact node arrays.

    xb: (d, n) uint8 binned features. samp: int64 row indices (the bootstrap).
    Leaf nodes keep feature = -1. Returns (feature, cut_bin, left, right,
    value, n_node, sse_decrease_by_feature).
    """
    d = xb.shape[0]
    m = samp.shape[0]
    max_nodes = 2 * m + 1
    feat = np.full(max_nodes, -1, np.int32)
    cutbin = np.zeros(max_nodes, np.int32)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    value = np.zeros(max_nodes, np.float64)
    n_node = np.zeros(max_nodes, np.int32)
    imp = np.zeros(d, np.float64)

    idx = samp.copy()
    buf = np.empty(m, np.int64)
    counts = np.zeros(256, np.int64)
    sums = np.zeros(256, np.float64)
    featbuf = np.empty(d, np.int64)

    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    stack_slot = np.empty(max_nodes, np.int64)
    top = 0
    stack_lo[top] = 0
    stack_hi[top] = m
    stack_depth[top] = 0
    stack_slot[top] = 0
    top += 1
    n_used = 1
    state = rng_state

    while top > 0:
        top -= 1
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        slot = stack_slot[top]
        mm = hi - lo

        s = 0.0
        s2 = 0.0
        for i in range(lo, hi):
            yy = y[idx[i]]
            s += yy
            s2 += yy * yy
        value[slot] = s / mm
        n_node[slot] = mm
        base = s * s / mm
        node_sse = s2 - base
        if depth >= max_depth or mm < min_split or node_sse <= 1e-12:
            continue

        if k_feat >= d:
            kk = d
            for j in range(d):
                featbuf[j] = j
            sub = featbuf
        else:
            for j in range(d):
                featbuf[j] = j
            for j in range(k_feat):
                state = state ^ (state >> np.uint64(12))
                state = state ^ (state << np.uint64(25))
                state = state ^ (state >> np.uint64(27))
                draw = state * np.uint64(0x2545F4914F6CDD1D)
                r = j + int(draw % np.uint64(d - j))
                tmp = featbuf[j]
                featbuf[j] = featbuf[r]
                featbuf[r] = tmp
            kk = k_feat
            sub = np.sort(featbuf[:kk])

        # Strictly-greater comparisons below keep the first best candidate,
        # i.e. ties resolve to the lowest feature index, then lowest cut.
        best_proxy = base + 1e-12 * (1.0 + s2)
        best_f = -1
        best_c = -1
        for fi in range(kk):
            f = sub[fi]
            nb = n_bins[f]
            if nb <= 1:
                continue
            for b in range(nb):
                counts[b] = 0
                sums[b] = 0.0
            for i in range(lo, hi):
                b = xb[f, idx[i]]
                counts[b] += 1
                sums[b] += y[idx[i]]
            nL = 0
            sL = 0.0
            for c in range(nb - 1):
                nL += counts[c]
                sL += sums[c]
                if nL < min_leaf:
                    continue
                nR = mm - nL
                if nR < min_leaf:
                    break
                if counts[c] == 0:
                    continue  # identical partition to the previous cut
                sR = s - sL
                proxy = sL * sL / nL + sR * sR / nR
                if proxy > best_proxy:
                    best_proxy = proxy
                    best_f = f
                    best_c = c
        if best_f < 0:
            continue

        feat[slot] = best_f
        cutbin[slot] = best_c
        imp[best_f] += best_proxy - base  # = sse(parent) - sse(left) - sse(right)

        pl = lo
        pr = 0
        for i in range(lo, hi):
            if xb[best_f, idx[i]] <= best_c:
                idx[pl] = idx[i]
                pl += 1
            else:
                buf[pr] = idx[i]
                pr += 1
        for i in range(pr):
            idx[pl + i] = buf[i]

        left_slot = n_used
        right_slot = n_used + 1
        n_used += 2
        left[slot] = left_slot
        right[slot] = right_slot
        stack_lo[top] = lo
        stack_hi[top] = pl
        stack_depth[top] = depth + 1
        stack_slot[top] = left_slot
        top += 1
        stack_lo[top] = pl
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        stack_slot[top] = right_slot
        top += 1

    return (
        feat[:n_used].copy(),
        cutbin[:n_used].copy(),
        left[:n_used].copy(),
        right[:n_used].copy(),
        value[:n_used].copy(),
        n_node[:n_used].copy(),
        imp,
    )


@njit(cache=True, nogil=True)
def _build_forest(xb, y, boots, states, n_bins, max_depth, min_split, min_leaf, k_feat):
    """Grow boots.shape[0] trees in one call; returns concatenated node arrays.

    Child indices stay local to each tree; ``offsets`` delimits the trees in
    the concatenated arrays.
    """
    T = boots.shape[0]
    d = xb.shape[0]
    cap = 4096
    feat_all = np.empty(cap, np.int32)
    cut_all = np.empty(cap, np.int32)
    left_all = np.empty(cap, np.int32)
    right_all = np.empty(cap, np.int32)
    val_all = np.empty(cap, np.float64)
    nn_all = np.empty(cap, np.int32)
    offsets = np.empty(T + 1, np.int64)
    imp = np.zeros(d, np.float64)
    total = 0
    for t in range(T):
        feat, cutbin, left, right, value, n_node, imp_t = _build_tree(
            xb, y, boots[t], max_depth, min_split, min_leaf, k_feat, states[t], n_bins
        )
        nt = feat.size
        if total + nt > cap:
            new_cap = cap
            while total + nt > new_cap:
                new_cap *= 2
            tmp = np.empty(new_cap, np.int32)
            tmp[:total] = feat_all[:total]
            feat_all = tmp
            tmp = np.empty(new_cap, np.int32)
            tmp[:total] = cut_all[:total]
            cut_all = tmp
            tmp = np.empty(new_cap, np.int32)
            tmp[:total] = left_all[:total]
            left_all = tmp
            tmp = np.empty(new_cap, np.int32)
            tmp[:total] = right_all[:total]
            right_all = tmp
            tmpf = np.empty(new_cap, np.float64)
            tmpf[:total] = val_all[:total]
            val_all = tmpf
            tmp = np.empty(new_cap, np.int32)
            tmp[:total] = nn_all[:total]
            nn_all = tmp
            cap = new_cap
        offsets[t] = total
        feat_all[total : total + nt] = feat
        cut_all[total : total + nt] = cutbin
        left_all[total : total + nt] = left
        right_all[total : total + nt] = right
        val_all[total : total + nt] = value
        nn_all[total : total + nt] = n_node
        imp += imp_t
        total += nt
    offsets[T] = total
    return (
        feat_all[:total].copy(),
        cut_all[:total].copy(),
        left_all[:total].copy(),
        right_all[:total].copy(),
        val_all[:total].copy(),
        nn_all[:total].copy(),
        offsets,
        imp,
    )


@njit(cache=True, nogil=True)
def _leaf_ids_binned(feat, cutbin, left, right, xb, rows):
    """Leaf index for each listed row, traversing on binned columns."""
    out = np.empty(rows.size, np.int64)
    for i in range(rows.size):
        rr = rows[i]
        node = 0
        while feat[node] >= 0:
            if xb[feat[node], rr] <= cutbin[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def _predict_tree(feat, thr, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def _leaf_ids(feat, thr, left, right, X):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True)
class Tree:
    """One fitted tree as flat arrays; ``feature`` is -1 at leaves."""

    feature: NDArray[np.int32]
    threshold: NDArray[np.float64]
    left: NDArray[np.int32]
    right: NDArray[np.int32]
    value: NDArray[np.float64]
    n_node: NDArray[np.int32]

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return _predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)

    def leaf_ids(self, X: NDArray[np.float64]) -> NDArray[np.int64]:
        return _leaf_ids(self.feature, self.threshold, self.left, self.right, X)


def resolve_thresholds(
    feat: NDArray[np.int32], cutbin: NDArray[np.int32], cuts: list[NDArray[np.float64]]
) -> NDArray[np.float64]:
    """Map (feature, cut index) pairs back to float thresholds."""
    if not cuts:
        return np.zeros(feat.shape[0])
    flat = np.concatenate([c if c.size else np.zeros(1) for c in cuts])
    offsets = np.zeros(len(cuts), dtype=np.int64)
    pos = 0
    for j, c in enumerate(cuts):
        offsets[j] = pos
        pos += max(c.size, 1)
    thr = np.zeros(feat.shape[0])
    mask = feat >= 0
    if mask.any():
        thr[mask] = flat[offsets[feat[mask]] + cutbin[mask]]
    return thr


def build_forest_trees(
    binned: NDArray[np.uint8],
    y: NDArray[np.float64],
    boots: NDArray[np.int64],
    states: NDArray[np.uint64],
    cuts: list[NDArray[np.float64]],
    n_bins: NDArray[np.int64],
    max_depth: int,
    min_samples_split: int,
    min_samples_leaf: int,
    k_features: int,
) -> tuple[list[Tree], NDArray[np.float64]]:
    """Grow one tree per bootstrap row of ``boots``; also return summed SSE decreases."""
    feat, cutbin, left, right, value, n_node, offsets, imp = _build_forest(
        binned,
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(boots, dtype=np.int64),
        np.ascontiguousarray(states, dtype=np.uint64),
        n_bins,
        max_depth,
        min_samples_split,
        min_samples_leaf,
        k_features,
    )
    thr = resolve_thresholds(feat, cutbin, cuts)
    trees = []
    for t in range(boots.shape[0]):
        o0, o1 = offsets[t], offsets[t + 1]
        trees.append(Tree(feat[o0:o1], thr[o0:o1], left[o0:o1], right[o0:o1], value[o0:o1], n_node[o0:o1]))
    return trees, imp


def build_tree_on_binned(
    binned: NDArray[np.uint8],
    y: NDArray[np.float64],
    sample_idx: NDArray[np.int64],
    cuts: list[NDArray[np.float64]],
    n_bins: NDArray[np.int64],
    max_depth: int,
    min_samples_split: int,
    min_samples_leaf: int,
    k_features: int,
    rng_state: int,
) -> tuple[Tree, NDArray[np.float64]]:
    """Grow one tree; returns it plus the per-feature SSE decrease it achieved."""
    feat, cutbin, left, right, value, n_node, imp = _build_tree(
        binned,
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(sample_idx, dtype=np.int64),
        max_depth,
        min_samples_split,
        min_samples_leaf,
        k_features,
        np.uint64(rng_state),
        n_bins,
    )
    thr = resolve_thresholds(feat, cutbin, cuts)
    return Tree(feat, thr, left, right, value, n_node), imp


@dataclass(frozen=True)
class ForestHyperparams:
    """Knobs of the regression forest; fractions are of rows/features."""

    n_estimators: int = 100
    max_depth: int = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_samples: float = 1.0
    max_features: float = 1.0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")
        if not (0.0 < self.max_samples <= 1.0):
            raise ValueError("max_samples must be in (0, 1]")
        if not (0.0 < self.max_features <= 1.0):
            raise ValueError("max_features must be in (0, 1]")


class RegressionForest:
    """Bagged CART regressor with out-of-bag scoring and split-gain importances.

    Each tree sees a bootstrap of ceil(max_samples * n) rows and considers
    ceil(max_features * d) features per split. Per-tree randomness comes from
    independent streams of ``seed``, so a fitted forest is a pure function of
    (X, y, hyperparams, seed): the prediction does not depend on tree order,
    and permuting training rows together with the bootstrap indices leaves
    predictions unchanged up to float summation order.
    """

    def __init__(self, params: ForestHyperparams, seed: int = 0):
        self.params = params
        self.seed = seed
        self.trees_: list[Tree] = []
        self.n_features_: int | None = None
        self.oob_score_: float | None = None
        self.feature_importances_: NDArray[np.float64] | None = None

    def fit(self, X, y, bootstrap_indices: list[NDArray[np.int64]] | None = None) -> "RegressionForest":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        n, d = X.shape
        if y.shape != (n,):
            raise ValueError("y must have one entry per row of X")
        p = self.params
        m = int(np.ceil(p.max_samples * n))
        k = int(np.ceil(p.max_features * d))
        binned, cuts, n_bins = bin_matrix(X)

        self.n_features_ = d
        boots = np.empty((p.n_estimators, m), dtype=np.int64)
        states = np.empty(p.n_estimators, dtype=np.uint64)
        for t in range(p.n_estimators):
            rng = child_rng(self.seed, t)  # stream keyed by tree index, not call order
            if bootstrap_indices is not None:
                boots[t] = bootstrap_indices[t]
            else:
                boots[t] = rng.integers(0, n, size=m)
            states[t] = rng.integers(1, np.iinfo(np.uint64).max, dtype=np.uint64)
        self.trees_, imp_total = build_forest_trees(
            binned, y, boots, states, cuts, n_bins,
            p.max_depth, p.min_samples_split, p.min_samples_leaf, k,
        )

        oob_sum = np.zeros(n)
        oob_cnt = np.zeros(n, dtype=np.int64)
        for t, tree in enumerate(self.trees_):
            out_mask = np.ones(n, dtype=bool)
            out_mask[boots[t]] = False
            if out_mask.any():
                rows = np.flatnonzero(out_mask)
                oob_sum[rows] += tree.predict(X[rows])
                oob_cnt[rows] += 1

        covered = oob_cnt > 0
        if covered.any():
            resid = y[covered] - oob_sum[covered] / oob_cnt[covered]
            denom = np.sum((y[covered] - y[covered].mean()) ** 2)
            self.oob_score_ = float(1.0 - np.sum(resid**2) / denom) if denom > 0 else None
        else:
            self.oob_score_ = None

        mean_imp = imp_total / p.n_estimators
        total = mean_imp.sum()
        self.feature_importances_ = mean_imp / total if total > 0 else np.zeros(d)
        return self

    def predict(self, X) -> NDArray[np.float64]:
        if not self.trees_:
            raise ValueError("forest is not fitted")
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        for tree in self.trees_:
            out += tree.predict(X)
        return out / len(self.trees_)
