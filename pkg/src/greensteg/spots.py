"""Anomaly-spot detection on per-pixel score maps (second stage).

Each cost group gets a 3x3 matched filter (the mean positive score block),
an 18-D block descriptor (9 raw scores plus 9 filter responses) and a
boosted classifier whose cutoff maximizes F1 on held-out blocks.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import gbdt
from .anomaly import AnomalyScoreMap

log = logging.getLogger(__name__)

SPOT = 3
FEATURE_DIM = 18
THRESHOLD_GRID = np.round(np.arange(101) * 0.01, 2)


@dataclass(frozen=True)
class MatchedFilter:
    group_id: int
    taps: np.ndarray  # (3, 3)


@dataclass
class Group2Model:
    group_id: int
    filter: MatchedFilter
    classifier: gbdt.GbdtModel
    threshold: float
    val_f1: float = float("nan")


@dataclass(frozen=True)
class Spot:
    row: int
    col: int
    group_id: int
    spot_score: float
    anomaly_score: float


@dataclass
class SpotList:
    spots: List[Spot]

    def __len__(self):
        return len(self.spots)

    def __iter__(self):
        return iter(self.spots)

    @property
    def anomaly_scores(self) -> np.ndarray:
        return np.array([s.anomaly_score for s in self.spots], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "group_id", "spot_score", "anomaly_score"])
            for s in self.spots:
                w.writerow([s.row, s.col, s.group_id, repr(s.spot_score), repr(s.anomaly_score)])


def fit_matched_filter(blocks: np.ndarray, group_id: int = 0) -> MatchedFilter:
    b = np.asarray(blocks, dtype=np.float64).reshape(-1, SPOT, SPOT)
    if len(b) == 0:
        raise ValueError("cannot fit a matched filter on zero blocks")
    return MatchedFilter(group_id, b.mean(axis=0))


def _response_map(scores: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Valid correlation; ``out[i, j]`` is centred on ``scores[i + 1, j + 1]``."""
    win = np.lib.stride_tricks.sliding_window_view(scores, (SPOT, SPOT))
    return np.einsum("ijab,ab->ij", win, taps)


def valid_centers(shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Row-major block centers at least two pixels away from the map border."""
    h, w = shape
    if h < 5 or w < 5:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    r, c = np.mgrid[2:h - 2, 2:w - 2]
    return r.ravel(), c.ravel()


def block_features_many(scores: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                        taps: np.ndarray) -> np.ndarray:
    """18-D features for many block centers of one score plane."""
    s = np.asarray(scores, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    h, w = s.shape
    if len(rows) and (rows.min() < 2 or cols.min() < 2 or rows.max() > h - 3 or cols.max() > w - 3):
        raise ValueError("block center closer than 2 pixels to the score-map border")
    resp = _response_map(s, np.asarray(taps, dtype=np.float64))
    dr, dc = np.meshgrid(np.arange(-1, 2), np.arange(-1, 2), indexing="ij")
    rr = rows[:, None] + dr.ravel()
    cc = cols[:, None] + dc.ravel()
    return np.hstack([s[rr, cc], resp[rr - 1, cc - 1]])


def block_features(score_map, center: Tuple[int, int], filt: MatchedFilter) -> np.ndarray:
    scores = score_map.scores if isinstance(score_map, AnomalyScoreMap) else score_map
    r, c = center
    return block_features_many(scores, np.array([r]), np.array([c]), filt.taps)[0]


def positive_blocks(change_map: np.ndarray, patch_size: int = 7) -> np.ndarray:
    """Mask over the score map: True where the 3x3 block's co-located pixels hold a change."""
    half = patch_size // 2
    changed = np.asarray(change_map) != 0
    core = changed[half:changed.shape[0] - half, half:changed.shape[1] - half]
    win = np.lib.stride_tricks.sliding_window_view(core, (SPOT, SPOT))
    out = np.zeros(core.shape, dtype=bool)
    out[1:-1, 1:-1] = win.any(axis=(-2, -1))
    return out


def collect_blocks(cover_maps: Sequence[AnomalyScoreMap], stego_maps: Sequence[AnomalyScoreMap],
                   change_maps: Sequence[np.ndarray], group_count: int, cap_per_group: int = 50_000,
                   seed: int = 0, patch_size: int = 7) -> List[np.ndarray]:
    """Per group, an (n, 3) array of (pair, row, col) positive block centers.

    The group of a block is that of its center pixel in the stego map.
    """
    rng = np.random.default_rng(seed)
    per_group: List[list] = [[] for _ in range(group_count)]
    for i, (sm, cm) in enumerate(zip(stego_maps, change_maps)):
        pos = positive_blocks(cm, patch_size)
        r, c = valid_centers(sm.shape)
        keep = pos[r, c]
        r, c = r[keep], c[keep]
        g = sm.group_ids[r, c]
        for gid in np.unique(g):
            m = g == gid
            per_group[int(gid)].append(np.column_stack([np.full(m.sum(), i), r[m], c[m]]))
    out = []
    for g in range(group_count):
        if not per_group[g]:
            out.append(np.zeros((0, 3), dtype=np.int64))
            continue
        a = np.vstack(per_group[g]).astype(np.int64)
        if len(a) > cap_per_group:
            a = a[np.sort(rng.choice(len(a), cap_per_group, replace=False))]
        out.append(a)
    return out


def _gather(maps: Sequence[AnomalyScoreMap], coords: np.ndarray, taps: np.ndarray) -> np.ndarray:
    feats = np.empty((len(coords), FEATURE_DIM))
    for i in np.unique(coords[:, 0]):
        m = coords[:, 0] == i
        feats[m] = block_features_many(maps[i].scores, coords[m, 1], coords[m, 2], taps)
    return feats


def _gather_blocks(maps: Sequence[AnomalyScoreMap], coords: np.ndarray) -> np.ndarray:
    out = np.empty((len(coords), SPOT, SPOT))
    for k, (i, r, c) in enumerate(coords):
        out[k] = maps[i].scores[r - 1:r + 2, c - 1:c + 2]
    return out


def f1_curve(scores: np.ndarray, labels: np.ndarray, grid: np.ndarray = THRESHOLD_GRID) -> np.ndarray:
    """F1 of the rule ``score > t`` for every ``t`` in ``grid``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = len(order) - np.searchsorted(order, grid, side="right")
    fp = len(neg) - np.searchsorted(neg, grid, side="right")
    fn = len(order) - tp
    denom = 2 * tp + fp + fn
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def select_f1_threshold(scores: np.ndarray, labels: np.ndarray, grid: np.ndarray = THRESHOLD_GRID,
                        null_scores: Optional[np.ndarray] = None,
                        max_fraction: float = 1.0) -> Tuple[float, float]:
    """(threshold, F1); ties go to the smallest threshold.

    With ``null_scores`` (scores of every block of cover images) only
    thresholds flagging at most ``max_fraction`` of them are admissible.
    """
    f1 = f1_curve(scores, labels, grid)
    if null_scores is not None and len(null_scores) and max_fraction < 1.0:
        s = np.sort(np.asarray(null_scores, dtype=np.float64))
        flagged = (len(s) - np.searchsorted(s, grid, side="right")) / len(s)
        f1 = np.where(flagged <= max_fraction, f1, -1.0)
    k = int(np.argmax(f1))
    return float(grid[k]), float(max(f1[k], 0.0))


def group_block_scores(maps: Sequence[AnomalyScoreMap], group_id: int, clf: gbdt.GbdtModel,
                       taps: np.ndarray) -> np.ndarray:
    """Classifier scores of every valid block whose center falls in ``group_id``."""
    out = []
    for m in maps:
        r, c = valid_centers(m.shape)
        keep = m.group_ids[r, c] == group_id
        if keep.any():
            out.append(clf.predict_proba(block_features_many(m.scores, r[keep], c[keep], taps)))
    return np.concatenate(out) if out else np.zeros(0)


def train_group2(group_id: int, train_coords: np.ndarray, train_cover: Sequence[AnomalyScoreMap],
                 train_stego: Sequence[AnomalyScoreMap], val_coords: Optional[np.ndarray] = None,
                 val_cover: Sequence[AnomalyScoreMap] = (), val_stego: Sequence[AnomalyScoreMap] = (),
                 config: gbdt.GbdtConfig = gbdt.GbdtConfig(),
                 max_spot_fraction: float = 1.0) -> Group2Model:
    """Fit the filter and classifier for one group and tune its cutoff.

    ``*_coords`` hold (pair, row, col) positive centers; the cover block at
    the same place in the same pair is the matching negative.  Without
    validation blocks the cutoff is tuned on the training blocks.  The
    cutoff maximizes F1 among those that mark at most ``max_spot_fraction``
    of this group's blocks on the cover maps as spots.
    """
    if len(train_coords) == 0:
        raise ValueError(f"group {group_id} has no positive blocks")
    filt = fit_matched_filter(_gather_blocks(train_stego, train_coords), group_id)
    x = np.vstack([_gather(train_stego, train_coords, filt.taps),
                   _gather(train_cover, train_coords, filt.taps)])
    n = len(train_coords)
    y = np.r_[np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)]
    clf = gbdt.fit(x, y, config)
    if val_coords is not None and len(val_coords):
        xv = np.vstack([_gather(val_stego, val_coords, filt.taps), _gather(val_cover, val_coords, filt.taps)])
        yv = np.r_[np.ones(len(val_coords)), np.zeros(len(val_coords))]
        null_maps = val_cover
    else:
        xv, yv = x, y
        null_maps = train_cover
    null = group_block_scores(null_maps, group_id, clf, filt.taps) if max_spot_fraction < 1.0 else None
    t, f1 = select_f1_threshold(clf.predict_proba(xv), yv, null_scores=null, max_fraction=max_spot_fraction)
    log.debug("group=%d blocks=%d threshold=%.2f f1=%.4f", group_id, n, t, f1)
    return Group2Model(group_id, filt, clf, t, f1)


def detect_spots(score_map: AnomalyScoreMap, models: Sequence[Optional[Group2Model]]) -> SpotList:
    """Classify every valid block with the model of its center's group."""
    r, c = valid_centers(score_map.shape)
    if len(r) == 0:
        return SpotList([])
    g = score_map.group_ids[r, c]
    keep = np.zeros(len(r), dtype=bool)
    spot_score = np.zeros(len(r))
    for gid, model in enumerate(models):
        if model is None:
            continue
        m = np.flatnonzero(g == gid)
        if len(m) == 0:
            continue
        p = model.classifier.predict_proba(block_features_many(score_map.scores, r[m], c[m], model.filter.taps))
        spot_score[m] = p
        keep[m] = p > model.threshold
    idx = np.flatnonzero(keep)  # already row-major
    return SpotList([Spot(int(r[k]), int(c[k]), int(g[k]), float(spot_score[k]),
                          float(score_map.scores[r[k], c[k]])) for k in idx])
