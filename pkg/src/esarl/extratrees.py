"""Ensembles of extremely randomized regression trees.

Each tree is grown on the full training set (no bootstrap). At every node a
fixed number of distinct candidate features is drawn, each gets one cut point
drawn uniformly between the feature's minimum and maximum inside the node,
and the candidate with the largest relative variance reduction

    score = (Var(node) - (n_l/n) Var(left) - (n_r/n) Var(right)) / Var(node)

wins. Splitting stops when a node holds fewer than ``l_min`` samples, its
targets are constant, or no candidate feature varies; leaves predict the node
mean and the ensemble prediction is the average over trees. A candidate whose
feature is constant inside the node is redrawn once from all features.

Randomness is confined to per-tree counter-based generators spawned from the
config seed, so fits are reproducible bit for bit regardless of how many
worker threads build the trees.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class EnsembleConfig:
    m_trees: int = 50
    k_candidates: int | None = None  # None means one candidate per input feature
    l_min: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.m_trees < 1:
            raise ValueError("need at least one tree")
        if self.l_min < 1:
            raise ValueError("l_min must be at least 1")
        if self.k_candidates is not None and self.k_candidates < 1:
            raise ValueError("k_candidates must be at least 1")


@njit(cache=True, nogil=True)
def _build_tree(x, y, l_min, k_cand, gen):
    n, d = x.shape
    max_nodes = 2 * n + 1
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes, np.float64)
    left = np.zeros(max_nodes, np.int64)
    right = np.zeros(max_nodes, np.int64)
    value = np.zeros(max_nodes, np.float64)
    count = np.zeros(max_nodes, np.int64)
    idx = np.arange(n)
    stack = np.empty((2 * n + 64, 3), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    top = 1
    n_nodes = 1
    scratch = np.empty(d, np.int64)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        m = hi - lo
        s = 0.0
        s2 = 0.0
        ymin = y[idx[lo]]
        ymax = ymin
        for t in range(lo, hi):
            v = y[idx[t]]
            s += v
            s2 += v * v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        count[node] = m
        if ymin == ymax:
            value[node] = ymin
            continue
        mean = s / m
        var = s2 / m - mean * mean
        if m < l_min or var <= 0.0:
            value[node] = mean
            continue
        for j in range(d):
            scratch[j] = j
        k = k_cand if k_cand < d else d
        best_score = -1.0
        best_f = -1
        best_cut = 0.0
        for j in range(k):
            pick = j + gen.integers(0, d - j)
            f = scratch[pick]
            scratch[pick] = scratch[j]
            scratch[j] = f
            fmin = x[idx[lo], f]
            fmax = fmin
            for t in range(lo + 1, hi):
                v = x[idx[t], f]
                if v < fmin:
                    fmin = v
                if v > fmax:
                    fmax = v
            if fmin == fmax:
                f = gen.integers(0, d)
                fmin = x[idx[lo], f]
                fmax = fmin
                for t in range(lo + 1, hi):
                    v = x[idx[t], f]
                    if v < fmin:
                        fmin = v
                    if v > fmax:
                        fmax = v
                if fmin == fmax:
                    continue
            cut = gen.uniform(fmin, fmax)
            sl = 0.0
            sl2 = 0.0
            nl = 0
            for t in range(lo, hi):
                if x[idx[t], f] <= cut:
                    v = y[idx[t]]
                    sl += v
                    sl2 += v * v
                    nl += 1
            nr = m - nl
            if nl == 0 or nr == 0:
                continue
            sr = s - sl
            sr2 = s2 - sl2
            varl = sl2 / nl - (sl / nl) ** 2
            varr = sr2 / nr - (sr / nr) ** 2
            score = (var - (nl / m) * varl - (nr / m) * varr) / var
            if score > best_score:
                best_score = score
                best_f = f
                best_cut = cut
        if best_f < 0:
            value[node] = mean
            continue
        i = lo
        jj = hi - 1
        while i <= jj:
            if x[idx[i], best_f] <= best_cut:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[jj]
                idx[jj] = tmp
                jj -= 1
        feat[node] = best_f
        thr[node] = best_cut
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = lo
        stack[top, 2] = i
        top += 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = i
        stack[top, 2] = hi
        top += 1
        n_nodes += 2
    return (feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), count[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _predict_ensemble(xq, feat, thr, left, right, value, offsets, out):
    mq = xq.shape[0]
    n_trees = offsets.size - 1
    for i in range(mq):
        # Averaging is anchored on the first tree's output so that trees in
        # unanimous agreement (e.g. constant training targets) average to
        # exactly their common value instead of picking up summation dust.
        first = 0.0
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feat[base + node] >= 0:
                if xq[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            if t == 0:
                first = value[base + node]
            else:
                acc += value[base + node] - first
        out[i] = first + acc / n_trees


class TreeEnsemble:
    """Fitted ensemble; trees live in flat arrays indexed via ``offsets``."""

    def __init__(self, config: EnsembleConfig, n_features: int, feat, thr,
                 left, right, value, count, offsets):
        self.config = config
        self.n_features = n_features
        self.feat = feat
        self.thr = thr
        self.left = left
        self.right = right
        self.value = value
        self.count = count
        self.offsets = offsets

    @property
    def n_trees(self) -> int:
        return self.offsets.size - 1

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError("query dimension does not match the training data")
        out = np.empty(x.shape[0])
        _predict_ensemble(x, self.feat, self.thr, self.left, self.right,
                          self.value, self.offsets, out)
        return out[0] if single else out

    def tree_nodes(self, t: int) -> dict:
        """Read-only views of one tree's node arrays (handy for inspection)."""
        lo, hi = self.offsets[t], self.offsets[t + 1]
        return {name: getattr(self, name)[lo:hi]
                for name in ("feat", "thr", "left", "right", "value", "count")}

    def save(self, path) -> None:
        meta = {"format": "tree-ensemble-v1", "n_features": self.n_features,
                "m_trees": self.config.m_trees,
                "k_candidates": self.config.k_candidates,
                "l_min": self.config.l_min, "seed": self.config.seed}
        np.savez(path, feat=self.feat, thr=self.thr, left=self.left,
                 right=self.right, value=self.value, count=self.count,
                 offsets=self.offsets, meta=np.array(json.dumps(meta)))

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "tree-ensemble-v1":
                raise ValueError("not a tree ensemble file")
            config = EnsembleConfig(m_trees=meta["m_trees"],
                                    k_candidates=meta["k_candidates"],
                                    l_min=meta["l_min"], seed=meta["seed"])
            return cls(config, meta["n_features"], z["feat"], z["thr"],
                       z["left"], z["right"], z["value"], z["count"],
                       z["offsets"])


def _validate_training_data(x, y):
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("x must be a non-empty (n, d) matrix")
    if y.shape != (x.shape[0],):
        raise ValueError("y must hold one target per row of x")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("training data must be finite")


def fit(x, y, config: EnsembleConfig = EnsembleConfig(),
        n_jobs: int = 1) -> TreeEnsemble:
    """Grow ``config.m_trees`` trees on the full dataset."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _validate_training_data(x, y)
    k = config.k_candidates if config.k_candidates is not None else x.shape[1]
    children = np.random.SeedSequence(config.seed).spawn(config.m_trees)

    def build(child):
        gen = np.random.Generator(np.random.Philox(child))
        return _build_tree(x, y, config.l_min, k, gen)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(build, children))
    else:
        trees = [build(c) for c in children]

    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    for i, t in enumerate(trees):
        offsets[i + 1] = offsets[i] + t[0].size
    parts = [np.concatenate([t[j] for t in trees]) for j in range(6)]
    return TreeEnsemble(config, x.shape[1], parts[0], parts[1], parts[2],
                        parts[3], parts[4], parts[5], offsets)


def cv_select_lmin(x, y, candidates=(5, 10, 50, 100), folds: int = 5,
                   rng: np.random.Generator | None = None,
                   m_trees: int = 50, k_candidates: int | None = None,
                   n_jobs: int = 1) -> int:
    """Pick the leaf-size floor with the lowest k-fold validation MSE.

    Ties go to the larger candidate (the smoother model).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _validate_training_data(x, y)
    if rng is None:
        rng = np.random.default_rng()
    cands = sorted(set(int(c) for c in candidates), reverse=True)
    if not cands:
        raise ValueError("need at least one candidate")
    if len(cands) == 1:
        return cands[0]
    n = x.shape[0]
    if n < 2:
        return cands[0]
    folds = max(2, min(folds, n))
    perm = rng.permutation(n)
    splits = np.array_split(perm, folds)
    seeds = rng.integers(0, 2 ** 63, size=(len(cands), folds))
    best_lmin, best_mse = cands[0], np.inf
    for ci, l_min in enumerate(cands):
        se_sum = 0.0
        for fi, val_idx in enumerate(splits):
            train_mask = np.ones(n, dtype=bool)
            train_mask[val_idx] = False
            cfg = EnsembleConfig(m_trees=m_trees, k_candidates=k_candidates,
                                 l_min=l_min, seed=int(seeds[ci, fi]))
            model = fit(x[train_mask], y[train_mask], cfg, n_jobs=n_jobs)
            err = model.predict(x[val_idx]) - y[val_idx]
            se_sum += float(err @ err)
        mse = se_sum / n
        if mse < best_mse:
            best_lmin, best_mse = l_min, mse
    return best_lmin
