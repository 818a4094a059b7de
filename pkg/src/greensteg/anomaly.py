"""Pixel-wise anomaly prediction (first stage of the detector).

Patches are grouped by the embedding cost around their center, each group
gets its own Saab features, a discriminant subset of them, and a two-round
boosted classifier.  Scoring an image yields one soft anomaly score per
interior pixel.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import gbdt
from .dft import DftReport, select_features
from .imaging import GrayImage
from .saab import SaabTriple, fit_triple, image_patches, patch_features
from .stego_sim import CostMap

log = logging.getLogger(__name__)

FALLBACK_SCORE = 0.5


@dataclass(frozen=True)
class GroupSpec:
    """Cost-range edges; ``boundaries[-1]`` is +inf so every cost lands somewhere."""

    boundaries: np.ndarray
    cost_window: int = 3

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or len(b) < 2:
            raise ValueError("need at least two boundaries")
        if b[0] != 0 or not np.isinf(b[-1]):
            raise ValueError("boundaries must start at 0 and end at +inf")
        if np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly ascending")
        if self.cost_window < 1 or self.cost_window % 2 == 0:
            raise ValueError("cost_window must be a positive odd integer")
        object.__setattr__(self, "boundaries", b)

    @property
    def group_count(self) -> int:
        return len(self.boundaries) - 1

    @classmethod
    def fixed_width(cls, group_count: int = 10, width: float = 1.0, cost_window: int = 3):
        edges = np.append(np.arange(group_count) * float(width), np.inf)
        return cls(edges, cost_window)

    @classmethod
    def from_quantiles(cls, patch_costs: np.ndarray, group_count: int = 10, cost_window: int = 3):
        """Equal-mass groups over a sample of patch costs."""
        inner = np.quantile(np.asarray(patch_costs, dtype=np.float64).ravel(),
                            np.arange(1, group_count) / group_count)
        edges = np.concatenate([[0.0], inner, [np.inf]])
        for i in range(1, group_count):
            if edges[i] <= edges[i - 1]:
                edges[i] = np.nextafter(edges[i - 1], np.inf)
        return cls(edges, cost_window)


def patch_cost(costs: CostMap, center, spec: GroupSpec) -> float:
    r, c = center
    h = spec.cost_window // 2
    if r < h or c < h or r + h >= costs.height or c + h >= costs.width:
        raise ValueError(f"center {center} too close to the border for a {spec.cost_window}-window")
    window = costs.costs[r - h:r + h + 1, c - h:c + h + 1]
    return float(window.sum() / window.size)


def patch_cost_map(costs: CostMap, spec: GroupSpec, patch_size: int = 7) -> np.ndarray:
    """Patch cost at every interior center of a ``patch_size`` window."""
    w = spec.cost_window
    if w > patch_size:
        raise ValueError("cost window larger than the patch")
    off = (patch_size - w) // 2
    rows = costs.height - patch_size + 1
    cols = costs.width - patch_size + 1
    if rows < 1 or cols < 1:
        raise ValueError("cost map smaller than one patch")
    windows = np.lib.stride_tricks.sliding_window_view(costs.costs, (w, w))
    sums = windows.reshape(windows.shape[0], windows.shape[1], -1).sum(axis=-1)
    return sums[off:off + rows, off:off + cols] / (w * w)


def assign_group(cost, spec: GroupSpec):
    """Group index of one cost or an array of costs (wet/overflow -> last group)."""
    idx = np.searchsorted(spec.boundaries, cost, side="right") - 1
    idx = np.clip(idx, 0, spec.group_count - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


# ---------------------------------------------------------------------------
# Sampling

@dataclass(frozen=True)
class TrainingPair:
    cover: GrayImage
    stego: GrayImage
    change_map: np.ndarray
    costs: CostMap  # computed on the cover


@dataclass
class GroupSamples:
    """Paired patches: ``positive[i]`` (stego) and ``negative[i]`` (cover) share ``coords[i]``."""

    group_id: int
    positive: np.ndarray
    negative: np.ndarray
    coords: np.ndarray  # (n, 3): pair index, row, col of the patch center

    def __len__(self):
        return len(self.positive)


def positive_mask(change_map: np.ndarray, patch_size: int = 7) -> np.ndarray:
    """True at interior centers whose window contains at least one change."""
    changed = (np.asarray(change_map) != 0).astype(np.int32)
    win = np.lib.stride_tricks.sliding_window_view(changed, (patch_size, patch_size))
    return win.reshape(win.shape[0], win.shape[1], -1).any(axis=-1)


def sample_pairs(pairs: Sequence[TrainingPair], spec: GroupSpec, cap_per_group: int = 50_000,
                 seed: int = 0, patch_size: int = 7) -> List[GroupSamples]:
    """Collect positive/negative patch pairs per cost group.

    Subsampling keeps the ``cap_per_group`` candidates with the smallest
    random keys, which is a streaming-friendly seeded reservoir.
    """
    rng = np.random.default_rng(seed)
    G = spec.group_count
    half = patch_size // 2
    kept = [np.zeros((0, 4)) for _ in range(G)]  # key, pair, row, col
    for i, pair in enumerate(pairs):
        groups = assign_group(patch_cost_map(pair.costs, spec, patch_size), spec)
        pos = positive_mask(pair.change_map, patch_size)
        keys = rng.random(groups.shape)
        for g in range(G):
            r, c = np.nonzero(pos & (groups == g))
            if len(r) == 0:
                continue
            cand = np.column_stack([keys[r, c], np.full(len(r), i), r, c])
            merged = np.vstack([kept[g], cand])
            if len(merged) > cap_per_group:
                part = np.argpartition(merged[:, 0], cap_per_group - 1)[:cap_per_group]
                merged = merged[part]
            kept[g] = merged
    out = []
    for g in range(G):
        sel = kept[g][:, 1:].astype(np.int64)
        sel = sel[np.lexsort((sel[:, 2], sel[:, 1], sel[:, 0]))]
        pos_p = np.empty((len(sel), patch_size, patch_size), dtype=np.uint8)
        neg_p = np.empty_like(pos_p)
        for k, (i, r, c) in enumerate(sel):
            pos_p[k] = pairs[i].stego.pixels[r:r + patch_size, c:c + patch_size]
            neg_p[k] = pairs[i].cover.pixels[r:r + patch_size, c:c + patch_size]
        coords = sel.copy()
        coords[:, 1:] += half  # store image coordinates of the center
        out.append(GroupSamples(g, pos_p, neg_p, coords))
    return out


# ---------------------------------------------------------------------------
# Per-group model

@dataclass
class Group1Model:
    group_id: int
    saab: SaabTriple
    selected: np.ndarray
    round1: gbdt.GbdtModel
    round2: List[Optional[gbdt.GbdtModel]]  # None -> fall back to round1
    round2_offset: bool = True
    dft: Optional[DftReport] = field(default=None, compare=False, repr=False)

    @property
    def n_bins(self) -> int:
        return len(self.round2)

    def score_features(self, feats: np.ndarray):
        """Round-1 and routed round-2 scores of selected-feature rows."""
        m1 = self.round1.decision_function(feats)
        s1 = gbdt.sigmoid(m1)
        s2 = s1.copy()
        bins = score_bins(s1, self.n_bins)
        for b, model in enumerate(self.round2):
            m = bins == b
            if model is not None and np.any(m):
                s2[m] = model.predict_proba(feats[m], m1[m] if self.round2_offset else None)
        return s1, s2

    def score_patches(self, patches7: np.ndarray):
        feats = patch_features(patches7, self.saab)[:, self.selected]
        return self.score_features(feats)


def score_bins(scores: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Uniform score intervals [0, .1), ..., [.9, 1.0]."""
    return np.minimum((np.asarray(scores) * n_bins).astype(np.int64), n_bins - 1)


def train_group(samples: GroupSamples, k: int = 15, gbdt_config: gbdt.GbdtConfig = gbdt.GbdtConfig(),
                n_bins: int = 10, saab_cap: int = 100_000, seed: int = 0,
                routing: str = "own", offset: bool = True) -> Group1Model:
    """Fit Saab banks, DFT selection, and the round-1/round-2 classifiers of one group.

    ``routing="own"`` bins every training sample by its own round-1 score,
    the same rule used when scoring.  ``routing="paired"`` bins positives by
    their score and lets each paired negative follow its positive.  With
    ``offset`` the round-2 models continue from the round-1 log-odds.
    """
    if routing not in ("own", "paired"):
        raise ValueError(f"unknown routing {routing!r}")
    n = len(samples)
    if n == 0:
        raise ValueError(f"group {samples.group_id} has no positive samples")
    patches = np.concatenate([samples.positive, samples.negative])
    labels = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)])
    triple = fit_triple(patches, cap=saab_cap, seed=seed)
    feats = patch_features(patches, triple)
    report = select_features(feats, labels, k)
    sel = feats[:, report.selected]
    round1 = gbdt.fit(sel, labels, gbdt_config)
    margin1 = round1.decision_function(sel)
    if routing == "own":
        bins = score_bins(gbdt.sigmoid(margin1), n_bins)
    else:
        pos_bins = score_bins(gbdt.sigmoid(margin1[:n]), n_bins)
        bins = np.concatenate([pos_bins, pos_bins])
    round2: List[Optional[gbdt.GbdtModel]] = []
    for b in range(n_bins):
        m = np.flatnonzero(bins == b)
        y = labels[m]
        if len(m) < 2 or y.min() == y.max():
            round2.append(None)
            continue
        init = margin1[m] if offset else None
        round2.append(gbdt.fit(sel[m], y, gbdt_config, init_margin=init))
    log.debug("group=%d samples=%d round2_bins=%d", samples.group_id, n,
              sum(r is not None for r in round2))
    return Group1Model(samples.group_id, triple, report.selected, round1, round2, offset, report)


# ---------------------------------------------------------------------------
# Scoring

@dataclass
class AnomalyScoreMap:
    scores: np.ndarray     # (H - P + 1, W - P + 1), final (round-2) scores
    group_ids: np.ndarray  # same shape
    round1: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.scores.shape


def score_image(img: GrayImage, costs: CostMap, models: Sequence[Optional[Group1Model]],
                spec: GroupSpec, patch_size: int = 7) -> AnomalyScoreMap:
    """Score every interior pixel; groups without a model emit 0.5."""
    if len(models) != spec.group_count:
        raise ValueError(f"{len(models)} group models for {spec.group_count} groups")
    if img.height < patch_size or img.width < patch_size:
        raise ValueError(f"image {img.width}x{img.height} smaller than the {patch_size}x{patch_size} patch")
    groups = assign_group(patch_cost_map(costs, spec, patch_size), spec)
    patches = image_patches(img.pixels, patch_size)
    s1 = np.full(groups.shape, FALLBACK_SCORE)
    s2 = np.full(groups.shape, FALLBACK_SCORE)
    for g, model in enumerate(models):
        if model is None:
            continue
        mask = groups == g
        if not np.any(mask):
            continue
        a, b = model.score_patches(patches[mask])
        s1[mask] = a
        s2[mask] = b
    return AnomalyScoreMap(s2, groups, s1)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = y.sum(), (~y).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def round_auc(model: Group1Model, samples: GroupSamples):
    """Held-out (round-1 AUC, round-2 AUC) on paired patch samples."""
    patches = np.concatenate([samples.positive, samples.negative])
    y = np.concatenate([np.ones(len(samples)), np.zeros(len(samples))])
    s1, s2 = model.score_patches(patches)
    return roc_auc(s1, y), roc_auc(s2, y)


# ---------------------------------------------------------------------------
# Exports

def score_plane_bytes(scores: np.ndarray) -> bytes:
    h, w = scores.shape
    return struct.pack("<II", w, h) + np.asarray(scores, dtype="<f4").tobytes()


def read_score_plane(buf: bytes) -> np.ndarray:
    w, h = struct.unpack_from("<II", buf, 0)
    return np.frombuffer(buf, dtype="<f4", count=w * h, offset=8).reshape(h, w)


def score_heatmap(scores: np.ndarray) -> GrayImage:
    return GrayImage(np.clip(np.round(np.asarray(scores) * 255), 0, 255).astype(np.uint8))
