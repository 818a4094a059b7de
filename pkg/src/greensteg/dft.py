"""Discriminant feature test: rank feature dimensions by best-split entropy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

N_BINS = 32


def binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1 - p) * np.log2(1 - p)
    return np.nan_to_num(h, nan=0.0)


def _check_labels(labels: np.ndarray) -> np.ndarray:
    y = np.asarray(labels).astype(np.int64).ravel()
    if y.size < 2:
        raise ValueError("need at least 2 samples")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary 0/1")
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    return y


def split_loss(values: np.ndarray, labels: np.ndarray, n_bins: int = N_BINS) -> Tuple[float, bool]:
    """Best weighted binary entropy over the interior bin boundaries of [min, max].

    Returns ``(loss, degenerate)``; ``degenerate`` is True when the feature is
    constant, in which case the loss is the entropy of the labels.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    y = _check_labels(labels)
    if v.size != y.size:
        raise ValueError("values and labels differ in length")
    n = y.size
    lo, hi = v.min(), v.max()
    if lo == hi:
        return float(binary_entropy(y.mean())), True
    thresholds = lo + (hi - lo) * np.arange(1, n_bins) / n_bins
    # slot k holds samples with thresholds[k-1] < v <= thresholds[k]
    slot = np.searchsorted(thresholds, v, side="left")
    n_slot = np.bincount(slot, minlength=n_bins)
    pos_slot = np.bincount(slot, weights=y, minlength=n_bins)
    n_left = np.cumsum(n_slot)[:-1]
    pos_left = np.cumsum(pos_slot)[:-1]
    n_right = n - n_left
    pos_right = y.sum() - pos_left
    with np.errstate(divide="ignore", invalid="ignore"):
        h_left = np.where(n_left > 0, binary_entropy(pos_left / n_left), 0.0)
        h_right = np.where(n_right > 0, binary_entropy(pos_right / n_right), 0.0)
    loss = (n_left * h_left + n_right * h_right) / n
    return float(loss.min()), False


def dft_loss(values: np.ndarray, labels: np.ndarray, n_bins: int = N_BINS) -> float:
    return split_loss(values, labels, n_bins)[0]


@dataclass(frozen=True)
class DftReport:
    losses: np.ndarray
    selected: np.ndarray
    degenerate: np.ndarray

    @property
    def k(self) -> int:
        return len(self.selected)


def select_features(matrix: np.ndarray, labels: np.ndarray, k: int = 15,
                    n_bins: int = N_BINS) -> DftReport:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if not 0 < k <= x.shape[1]:
        raise ValueError(f"k={k} outside 1..{x.shape[1]}")
    results = [split_loss(x[:, j], labels, n_bins) for j in range(x.shape[1])]
    degenerate = np.array([d for _, d in results])
    losses = np.array([1.0 if d else loss for loss, d in results])
    # stable sort breaks ties by lower index
    order = np.argsort(losses, kind="stable")
    return DftReport(losses, np.sort(order[:k]), degenerate)


def write_loss_csv(report: DftReport, path, kernel_sizes: Optional[Sequence[int]] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dimension_index", "loss", "bank_of_origin"])
        for i, loss in enumerate(report.losses):
            bank = f"{kernel_sizes[i]}x{kernel_sizes[i]}" if kernel_sizes is not None else ""
            w.writerow([i, repr(float(loss)), bank])
