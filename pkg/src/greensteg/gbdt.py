"""Small second-order gradient-boosted tree classifier with histogram splits.

Every learner in the pipeline is one of these: 100 depth-2 trees on a
logistic loss by default.  Models are plain arrays, so prediction can be
vectorised and the parameter/FLOP accounting read straight off the trees.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 100
    max_depth: int = 2
    learning_rate: float = 0.3
    lambda_reg: float = 1.0
    min_child_weight: float = 1.0
    n_bins: int = 32
    seed: int = 0


@dataclass
class Tree:
    """Preorder node arrays; ``feature == LEAF`` marks a leaf holding ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_internal(self) -> int:
        return int(np.count_nonzero(self.feature != LEAF))

    @property
    def n_leaves(self) -> int:
        return self.n_nodes - self.n_internal

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)


@dataclass
class GbdtModel:
    trees: List[Tree]
    learning_rate: float
    base_score: float
    feature_dim: int
    max_depth: int = 2
    train_loss: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _stacked(self):
        cache = getattr(self, "_stack_cache", None)
        if cache is not None and cache[0] == len(self.trees):
            return cache[1]
        width = max((t.n_nodes for t in self.trees), default=1)
        shape = (len(self.trees), width)
        feat = np.full(shape, LEAF, dtype=np.int64)
        thr = np.zeros(shape)
        left = np.zeros(shape, dtype=np.int64)
        right = np.zeros(shape, dtype=np.int64)
        val = np.zeros(shape)
        for k, t in enumerate(self.trees):
            n = t.n_nodes
            feat[k, :n] = t.feature
            thr[k, :n] = t.threshold
            left[k, :n] = np.where(t.feature == LEAF, np.arange(n), t.left)
            right[k, :n] = np.where(t.feature == LEAF, np.arange(n), t.right)
            val[k, :n] = t.value
        depth = max((t.depth() for t in self.trees), default=0)
        stacked = (feat, thr, left, right, val, depth)
        object.__setattr__(self, "_stack_cache", (len(self.trees), stacked))
        return stacked

    def leaf_values(self, x: np.ndarray) -> np.ndarray:
        """(N, n_trees) leaf score reached by each sample in each tree."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ValueError(f"expected (N, {self.feature_dim}) features, got {x.shape}")
        if not self.trees:
            return np.zeros((len(x), 0))
        feat, thr, left, right, val, depth = self._stacked()
        t_idx = np.arange(len(self.trees))[None, :]
        rows = np.arange(len(x))[:, None]
        node = np.zeros((len(x), len(self.trees)), dtype=np.int64)
        for _ in range(depth):
            f = feat[t_idx, node]
            go_left = x[rows, np.maximum(f, 0)] <= thr[t_idx, node]
            node = np.where(go_left, left[t_idx, node], right[t_idx, node])
        return val[t_idx, node]

    def decision_function(self, x: np.ndarray, init_margin=None) -> np.ndarray:
        leaves = self.leaf_values(x)
        start = np.full((len(leaves), 1), self.base_score)
        if init_margin is not None:
            start = start + np.asarray(init_margin, dtype=np.float64).reshape(-1, 1)
        # accumulate tree by tree, starting from the base score
        return np.cumsum(np.hstack([start, leaves]), axis=1)[:, -1]

    def predict_proba(self, x: np.ndarray, init_margin=None) -> np.ndarray:
        return sigmoid(self.decision_function(x, init_margin))


def sigmoid(m):
    return 1.0 / (1.0 + np.exp(-np.asarray(m, dtype=np.float64)))


def predict(model: GbdtModel, x) -> float:
    """Soft score in [0, 1] for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.feature_dim:
        raise ValueError(f"expected a {model.feature_dim}-vector, got shape {x.shape}")
    return float(model.predict_proba(x[None])[0])


def logloss(y: np.ndarray, margin: np.ndarray) -> float:
    # log(1 + e^m) - y m, written to stay finite for large |m|
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


# ---------------------------------------------------------------------------
# Training

def _bin_edges(x: np.ndarray, n_bins: int) -> List[np.ndarray]:
    qs = np.arange(1, n_bins) / n_bins
    edges = np.quantile(x, qs, axis=0)
    return [np.unique(edges[:, j]) for j in range(x.shape[1])]


class _Builder:
    def __init__(self, x, cfg: GbdtConfig):
        self.cfg = cfg
        self.edges = _bin_edges(x, cfg.n_bins)
        self.n_slots = cfg.n_bins
        bins = np.empty(x.shape, dtype=np.int32)
        for j, e in enumerate(self.edges):
            bins[:, j] = np.searchsorted(e, x[:, j], side="left")
        self.bins = bins
        d = x.shape[1]
        self.flat = bins + (np.arange(d, dtype=np.int32) * self.n_slots)[None, :]
        valid = np.zeros((d, self.n_slots), dtype=bool)
        for j, e in enumerate(self.edges):
            valid[j, :len(e)] = True
        self.valid = valid

    def histogram(self, idx, g, h):
        d = self.bins.shape[1]
        flat = self.flat[idx].ravel()
        size = d * self.n_slots
        gh = np.bincount(flat, weights=np.repeat(g[idx], d), minlength=size)
        hh = np.bincount(flat, weights=np.repeat(h[idx], d), minlength=size)
        return gh.reshape(d, self.n_slots), hh.reshape(d, self.n_slots)

    def best_split(self, gh, hh, G, H):
        cfg = self.cfg
        gl = np.cumsum(gh, axis=1)
        hl = np.cumsum(hh, axis=1)
        gr, hr = G - gl, H - hl
        lam = cfg.lambda_reg
        gain = 0.5 * (gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - G ** 2 / (H + lam))
        ok = self.valid & (hl >= cfg.min_child_weight) & (hr >= cfg.min_child_weight)
        gain = np.where(ok, gain, -np.inf)
        best = int(np.argmax(gain))
        j, k = divmod(best, self.n_slots)
        if not gain[j, k] > 0:
            return None
        return j, k

    def grow(self, g, h):
        cfg = self.cfg
        nodes = []  # [feature, threshold, left, right, value]
        update = np.zeros(len(g))

        def build(idx, depth, hist):
            me = len(nodes)
            nodes.append([LEAF, 0.0, LEAF, LEAF, 0.0])
            G, H = g[idx].sum(), h[idx].sum()
            split = None
            if depth < cfg.max_depth and len(idx) > 1:
                if hist is None:
                    hist = self.histogram(idx, g, h)
                split = self.best_split(hist[0], hist[1], G, H)
            if split is None:
                nodes[me][4] = -G / (H + cfg.lambda_reg) * cfg.learning_rate
                update[idx] = nodes[me][4]
                return
            j, k = split
            go_left = self.bins[idx, j] <= k
            left_idx, right_idx = idx[go_left], idx[~go_left]
            left_hist = right_hist = None
            if depth + 1 < cfg.max_depth:
                # histogram the smaller child, derive the sibling by subtraction
                if len(left_idx) <= len(right_idx):
                    left_hist = self.histogram(left_idx, g, h)
                    right_hist = (hist[0] - left_hist[0], hist[1] - left_hist[1])
                else:
                    right_hist = self.histogram(right_idx, g, h)
                    left_hist = (hist[0] - right_hist[0], hist[1] - right_hist[1])
            nodes[me][0] = j
            nodes[me][1] = float(self.edges[j][k])
            nodes[me][2] = len(nodes)
            build(left_idx, depth + 1, left_hist)
            nodes[me][3] = len(nodes)
            build(right_idx, depth + 1, right_hist)

        build(np.arange(len(g)), 0, None)
        cols = list(zip(*nodes))
        tree = Tree(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.float64),
                    np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                    np.array(cols[4], dtype=np.float64))
        return tree, update


def fit(features, labels, config: GbdtConfig = GbdtConfig(), init_margin=None) -> GbdtModel:
    """Newton boosting on the logistic loss; deterministic for fixed inputs.

    With ``init_margin`` boosting continues from those per-sample log-odds
    (base score 0); the same offset must then be passed at prediction time.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64).ravel()
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("features must be a non-empty (N, D) matrix")
    if len(x) != len(y) or len(y) < 2:
        raise ValueError("need at least 2 samples with matching labels")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary 0/1")
    n_pos = y.sum()
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("both classes must be present")
    if init_margin is None:
        base = float(np.clip(np.log(n_pos / (len(y) - n_pos)), -5.0, 5.0))
        margin = np.full(len(y), base)
    else:
        base = 0.0
        margin = base + np.asarray(init_margin, dtype=np.float64).ravel()
        if margin.shape != y.shape:
            raise ValueError("init_margin must have one entry per sample")

    builder = _Builder(x, config)
    model = GbdtModel([], config.learning_rate, base, x.shape[1], config.max_depth)
    losses = [logloss(y, margin)]
    for _ in range(config.n_trees):
        p = sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree, update = builder.grow(g, h)
        model.trees.append(tree)
        margin = margin + update
        losses.append(logloss(y, margin))
    model.train_loss = np.array(losses)
    return model


# ---------------------------------------------------------------------------
# Accounting

def count_params(model: GbdtModel) -> int:
    """Feature index + threshold per internal node, one score per leaf, plus the base score."""
    return sum(2 * t.n_internal + t.n_leaves for t in model.trees) + 1


def count_flops_per_predict(model: GbdtModel) -> int:
    """Published convention: depth x trees x 2 comparisons, plus one addition per tree."""
    if model.n_trees == 0:
        return 0
    return model.max_depth * model.n_trees * 2 + model.n_trees


def count_flops_exact(model: GbdtModel, x=None) -> int:
    """Comparisons plus additions actually executed.

    With ``x`` the path of that sample is traced; without it the deepest path
    of every tree is charged (worst case).
    """
    comparisons = 0
    for t in model.trees:
        if x is None:
            comparisons += t.depth()
            continue
        i = 0
        while t.feature[i] != LEAF:
            comparisons += 1
            i = t.left[i] if x[t.feature[i]] <= t.threshold[i] else t.right[i]
    return comparisons + model.n_trees


# ---------------------------------------------------------------------------
# Serialization: little-endian, 64-bit floats, preorder node lists

def to_bytes(model: GbdtModel) -> bytes:
    out = [struct.pack("<dd3I", model.learning_rate, model.base_score,
                       model.feature_dim, model.max_depth, model.n_trees)]
    for t in model.trees:
        out.append(struct.pack("<I", t.n_nodes))
        out.append(t.feature.astype("<i4").tobytes())
        out.append(t.left.astype("<i4").tobytes())
        out.append(t.right.astype("<i4").tobytes())
        out.append(t.threshold.astype("<f8").tobytes())
        out.append(t.value.astype("<f8").tobytes())
    return b"".join(out)


def from_bytes(buf: bytes, offset: int = 0):
    """Decode a model starting at ``offset``; returns ``(model, next_offset)``."""
    lr, base, dim, depth, n_trees = struct.unpack_from("<dd3I", buf, offset)
    offset += struct.calcsize("<dd3I")
    trees = []
    for _ in range(n_trees):
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        arrays = []
        for dt, size in (("<i4", 4), ("<i4", 4), ("<i4", 4), ("<f8", 8), ("<f8", 8)):
            arrays.append(np.frombuffer(buf, dtype=dt, count=n, offset=offset))
            offset += n * size
        feat, left, right, thr, val = arrays
        trees.append(Tree(feat.astype(np.int64), thr.astype(np.float64), left.astype(np.int64),
                          right.astype(np.int64), val.astype(np.float64)))
    return GbdtModel(trees, lr, base, dim, depth), offset
