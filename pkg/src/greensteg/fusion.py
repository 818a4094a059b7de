"""Image-level decision from the top-M spot anomaly scores (third stage)."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import gbdt

log = logging.getLogger(__name__)

REFERENCE_GRID = tuple(range(100, 1001, 50))
REFERENCE_AREA = 250 * 250
N_CLASSIFIERS = 5
VOTE_CUTOFF = 0.5
PAD_VALUE = 0.0


def topm_vector(spots, m: int) -> np.ndarray:
    """Top ``m`` spot anomaly scores, descending, zero-padded on the right.

    Ties are broken by ascending (row, col) so the result does not depend on
    the order in which spots are listed.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    items = list(spots)
    out = np.full(m, PAD_VALUE)
    if not items:
        return out
    s = np.array([sp.anomaly_score for sp in items], dtype=np.float64)
    r = np.array([sp.row for sp in items])
    c = np.array([sp.col for sp in items])
    order = np.lexsort((c, r, -s))[:m]
    out[:len(order)] = s[order]
    return out


def topm_matrix(spot_lists: Sequence, m: int) -> np.ndarray:
    return np.vstack([topm_vector(s, m) for s in spot_lists]) if spot_lists else np.zeros((0, m))


def scaled_grid(height: int, width: int, patch_size: int = 7, grid=REFERENCE_GRID, minimum: int = 5) -> List[int]:
    """M grid rescaled by the interior area relative to a 256x256 image; duplicates dropped."""
    rows, cols = height - patch_size + 1, width - patch_size + 1
    if rows <= 0 or cols <= 0:
        raise ValueError("image smaller than the patch")
    area = rows * cols
    ratio = area / REFERENCE_AREA
    out = sorted({max(minimum, int(round(m * ratio))) for m in grid})
    if not out:
        raise ValueError("M grid is empty after scaling")
    return out


def five_around(grid: Sequence[int], best: int) -> List[int]:
    """The best index and its two neighbours on each side, shifted inside the grid."""
    n = len(grid)
    if n < N_CLASSIFIERS:
        raise ValueError(f"need at least {N_CLASSIFIERS} grid values, got {n}")
    lo = min(max(best - 2, 0), n - N_CLASSIFIERS)
    return list(grid[lo:lo + N_CLASSIFIERS])


@dataclass
class GridSearchResult:
    grid: List[int]
    accuracy: np.ndarray
    chosen: List[int]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "accuracy"])
            for m, a in zip(self.grid, self.accuracy):
                w.writerow([m, repr(float(a))])


def _folds(labels: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stratified half/half split of the validation images."""
    rng = np.random.default_rng(seed)
    fit_idx, held_idx = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        k = (len(idx) + 1) // 2
        fit_idx.append(idx[:k])
        held_idx.append(idx[k:])
    return np.sort(np.concatenate(fit_idx)), np.sort(np.concatenate(held_idx))


def grid_search_m(spot_lists: Sequence, labels, grid: Sequence[int],
                  config: gbdt.GbdtConfig = gbdt.GbdtConfig(), seed: int = 0) -> GridSearchResult:
    """Accuracy of a temporary classifier per grid value; pick the best and four neighbours."""
    y = np.asarray(labels).astype(np.int64)
    if y.min() == y.max():
        raise ValueError("validation set needs both classes")
    grid = list(grid)
    if not grid:
        raise ValueError("M grid is empty")
    fit_idx, held_idx = _folds(y, seed)
    if len(np.unique(y[fit_idx])) < 2 or len(held_idx) == 0:
        raise ValueError("validation set too small for a fit/held split")
    full = topm_matrix(spot_lists, max(grid))
    acc = np.empty(len(grid))
    for k, m in enumerate(grid):
        x = full[:, :m]
        model = gbdt.fit(x[fit_idx], y[fit_idx], config)
        pred = (model.predict_proba(x[held_idx]) > VOTE_CUTOFF).astype(np.int64)
        acc[k] = float(np.mean(pred == y[held_idx]))
    best = int(np.argmax(acc))  # first maximum, i.e. smallest M on ties
    chosen = five_around(grid, best)
    log.debug("grid best m=%d acc=%.4f chosen=%s", grid[best], acc[best], chosen)
    return GridSearchResult(grid, acc, chosen)


@dataclass
class FusionModel:
    m_values: List[int]
    classifiers: List[gbdt.GbdtModel]

    def __post_init__(self):
        if len(self.m_values) != N_CLASSIFIERS or len(self.classifiers) != N_CLASSIFIERS:
            raise ValueError(f"fusion needs exactly {N_CLASSIFIERS} classifiers")
        if any(b <= a for a, b in zip(self.m_values, self.m_values[1:])) or self.m_values[0] < 1:
            raise ValueError("m_values must be positive, ascending and distinct")


def train_fusion(spot_lists: Sequence, labels, m_values: Sequence[int],
                 config: gbdt.GbdtConfig = gbdt.GbdtConfig()) -> FusionModel:
    y = np.asarray(labels).astype(np.int64)
    full = topm_matrix(spot_lists, max(m_values))
    return FusionModel(list(m_values), [gbdt.fit(full[:, :m], y, config) for m in m_values])


def soft_scores(spots, model: FusionModel) -> np.ndarray:
    return np.array([float(clf.predict_proba(topm_vector(spots, m)[None])[0])
                     for m, clf in zip(model.m_values, model.classifiers)])


def classify_image(spots, model: FusionModel) -> Tuple[int, np.ndarray]:
    """(label, five soft scores); label 1 means stego, by a 3-of-5 vote."""
    s = soft_scores(spots, model)
    return majority_vote(s), s


def majority_vote(scores) -> int:
    votes = np.asarray(scores) > VOTE_CUTOFF
    return int(votes.sum() * 2 > len(votes))


@dataclass(frozen=True)
class EvalReport:
    p_fa: float
    p_md: float
    p_e: float
    n_cover: int
    n_stego: int

    def text(self) -> str:
        return (f"covers: {self.n_cover}  stegos: {self.n_stego}\n"
                f"false alarms:  {self.p_fa:.4f}\n"
                f"missed:        {self.p_md:.4f}\n"
                f"P_E:           {self.p_e:.4f}")

    def key_values(self) -> str:
        return "\n".join(f"{k}={v!r}" for k, v in [
            ("p_fa", self.p_fa), ("p_md", self.p_md), ("p_e", self.p_e),
            ("n_cover", self.n_cover), ("n_stego", self.n_stego)])


def evaluate(decisions: Sequence[Tuple[int, int]]) -> EvalReport:
    """``decisions`` holds (predicted, truth) pairs with 1 = stego."""
    d = np.asarray(decisions, dtype=np.int64).reshape(-1, 2)
    pred, truth = d[:, 0], d[:, 1]
    covers, stegos = truth == 0, truth == 1
    n_cover, n_stego = int(covers.sum()), int(stegos.sum())
    if n_cover == 0 or n_stego == 0:
        raise ValueError("evaluation needs at least one cover and one stego")
    p_fa = float(np.count_nonzero(pred[covers] == 1)) / n_cover
    p_md = float(np.count_nonzero(pred[stegos] == 0)) / n_stego
    return EvalReport(p_fa, p_md, (p_fa + p_md) / 2, n_cover, n_stego)
