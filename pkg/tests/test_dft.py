import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from greensteg.dft import binary_entropy, dft_loss, select_features, split_loss, write_loss_csv


def exhaustive_loss(v, y):
    """Best split over every midpoint of the sorted distinct values."""
    best = binary_entropy(y.mean())
    u = np.unique(v)
    for t in (u[:-1] + u[1:]) / 2:
        left = v <= t
        nl, nr = left.sum(), (~left).sum()
        loss = (nl * binary_entropy(y[left].mean()) + nr * binary_entropy(y[~left].mean())) / len(y)
        best = min(best, loss)
    return best


def binned_oracle(v, y, n_bins=32):
    lo, hi = v.min(), v.max()
    best = np.inf
    for k in range(1, n_bins):
        t = lo + (hi - lo) * k / n_bins
        left = v <= t
        nl, nr = left.sum(), (~left).sum()
        hl = binary_entropy(y[left].mean()) if nl else 0.0
        hr = binary_entropy(y[~left].mean()) if nr else 0.0
        best = min(best, (nl * hl + nr * hr) / len(y))
    return best


def test_perfect_split_is_zero():
    v = np.r_[np.zeros(50), np.ones(50)]
    y = np.r_[np.zeros(50), np.ones(50)]
    assert dft_loss(v, y) == 0.0


def test_uninformative_is_one_bit():
    rng = np.random.default_rng(0)
    y = np.tile([0, 1], 5000)
    v = np.repeat(rng.normal(size=5000), 2)  # identical values in both classes
    assert dft_loss(v, y) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_binned_and_exhaustive_oracles(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 300)
    y[:2] = [0, 1]
    v = rng.normal(size=300) + 0.8 * y
    got = dft_loss(v, y)
    assert got == pytest.approx(binned_oracle(v, y), abs=1e-12)
    ex = exhaustive_loss(v, y)
    assert ex - 1e-12 <= got <= ex + 0.05


def test_degenerate_and_errors():
    loss, degenerate = split_loss(np.ones(10), np.r_[np.zeros(5), np.ones(5)])
    assert degenerate and loss == 1.0
    with pytest.raises(ValueError):
        dft_loss(np.arange(4.0), np.ones(4))
    with pytest.raises(ValueError):
        dft_loss(np.arange(4.0), np.array([0, 1, 2, 1]))
    with pytest.raises(ValueError):
        dft_loss(np.arange(4.0), np.array([0, 1, 0]))


def test_selection_prefers_informative_dims(tmp_path):
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 2000)
    x = rng.normal(size=(2000, 20))
    x[:, [3, 11, 17]] += 2.0 * y[:, None]
    x[:, 5] = 7.0
    rep = select_features(x, y, k=3)
    assert rep.selected.tolist() == [3, 11, 17]
    assert rep.degenerate[5] and rep.losses[5] == 1.0
    # ties are broken by lower index
    tie = select_features(np.column_stack([x[:, 3], x[:, 3], x[:, 0]]), y, k=1)
    assert tie.selected.tolist() == [0]
    path = tmp_path / "loss.csv"
    write_loss_csv(rep, path, kernel_sizes=[3] * 20)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["dimension_index", "loss", "bank_of_origin"]
    assert len(rows) == 21 and rows[4][2] == "3x3" and float(rows[4][1]) == rep.losses[3]
    with pytest.raises(ValueError):
        select_features(x, y, k=0)
