"""Embedding-cost maps and a payload-limited simulated +/-1 embedder.

Costs follow the usual content-adaptive recipes (HILL, S-UNIWARD) with
symmetric border padding.  Embedding is simulated: each pixel is changed
with the probability an optimal coder would realize at the requested payload,
so no actual message coding takes place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .imaging import GrayImage

WET_COST = 1e10

HILL_KB = np.array([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]], dtype=float) / 4.0

# Daubechies-8 decomposition filters (16 taps).
DB8_LOW = np.array([
    -0.00011747678400228192, 0.0006754494059985568, -0.0003917403729959771,
    -0.00487035299301066, 0.008746094047015655, 0.013981027917015516,
    -0.04408825393106472, -0.01736930100202211, 0.128747426620186,
    0.00047248457399797254, -0.2840155429624281, -0.015829105256023893,
    0.5853546836548691, 0.6756307362980128, 0.3128715909144659,
    0.05441584224308161,
])
DB8_HIGH = -((-1.0) ** np.arange(16)) * DB8_LOW[::-1]

SUNIWARD_SIGMA = 1.0


def suniward_filters():
    """The three directional 16x16 kernels (LH, HL, HH)."""
    lo, hi = DB8_LOW, DB8_HIGH
    return (np.outer(lo, hi), np.outer(hi, lo), np.outer(hi, hi))


@dataclass(frozen=True)
class CostMap:
    costs: np.ndarray
    wet_threshold: float = WET_COST

    def __post_init__(self):
        c = np.array(self.costs, dtype=np.float64, copy=True)
        if c.ndim != 2:
            raise ValueError("cost map must be 2-D")
        c[~np.isfinite(c)] = self.wet_threshold
        if np.any(c < 0):
            raise ValueError("costs must be non-negative")
        np.minimum(c, self.wet_threshold, out=c)
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def wet(self) -> np.ndarray:
        return self.costs >= self.wet_threshold


@dataclass(frozen=True)
class EmbeddingResult:
    stego: GrayImage
    change_map: np.ndarray  # int8, values in {-1, 0, 1}
    realized_payload: float  # bits per pixel, sum of ternary entropies / N
    lam: float
    probabilities: Optional[np.ndarray] = None  # per-direction change probability


def _as_float(img) -> np.ndarray:
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    return px.astype(np.float64)


def hill_cost(img: GrayImage, wet_threshold: float = WET_COST) -> CostMap:
    """HILL costs: high-pass residual, 3x3 local magnitude, reciprocal, 15x15 spreading."""
    if img.height < 15 or img.width < 15:
        raise ValueError("HILL needs an image of at least 15x15")
    x = _as_float(img)
    residual = ndimage.correlate(x, HILL_KB, mode="reflect")
    magnitude = ndimage.uniform_filter(np.abs(residual), size=3, mode="reflect")
    with np.errstate(divide="ignore"):
        rho = np.where(magnitude > 0, 1.0 / np.where(magnitude > 0, magnitude, 1.0), wet_threshold)
    rho = np.minimum(rho, wet_threshold)
    spread = ndimage.uniform_filter(rho, size=15, mode="reflect")
    # a flat 15x15 neighborhood stays exactly wet despite averaging round-off
    spread[ndimage.minimum_filter(rho, size=15, mode="reflect") >= wet_threshold] = wet_threshold
    return CostMap(spread, wet_threshold)


def suniward_cost(img: GrayImage, sigma: float = SUNIWARD_SIGMA,
                  wet_threshold: float = WET_COST) -> CostMap:
    """S-UNIWARD costs: sum over directional wavelet coefficients of |tap| / (sigma + |coef|)."""
    if img.height < 16 or img.width < 16:
        raise ValueError("S-UNIWARD needs an image of at least 16x16")
    x = _as_float(img)
    h, w = x.shape
    pad = 16
    xp = np.pad(x, pad, mode="symmetric")
    rho = np.zeros_like(x)
    for f in suniward_filters():
        # coef[j] = sum_t f[t] * xp[j + t]  (valid correlation)
        coef = _valid_correlate(xp, f)
        q = 1.0 / (sigma + np.abs(coef))
        # d coef[j] / d xp[u] = f[u - j]; rho[u] = sum_t |f[t]| q[u - t]
        af = np.abs(f)
        acc = np.zeros_like(x)
        for a in range(16):
            for b in range(16):
                acc += af[a, b] * q[pad - a:pad - a + h, pad - b:pad - b + w]
        rho += acc
    return CostMap(rho, wet_threshold)


def _valid_correlate(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x, f.shape)
    return np.einsum("ijab,ab->ij", windows, f, optimize=True)


COST_FUNCTIONS = {"hill": hill_cost, "suniward": suniward_cost}


def compute_costs(img: GrayImage, scheme: str) -> CostMap:
    try:
        fn = COST_FUNCTIONS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(COST_FUNCTIONS)}") from None
    return fn(img)


# ---------------------------------------------------------------------------
# Simulated payload-limited sender

def ternary_entropy(p: np.ndarray) -> np.ndarray:
    """Entropy in bits of the distribution (p, p, 1 - 2p), elementwise."""
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - 2.0 * p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -2.0 * p * np.log2(p) - q * np.log2(q)
    return np.where((p <= 0) | (q <= 0), np.where(p <= 0, 0.0, 1.0), h)


def change_probabilities(costs: CostMap, lam: float) -> np.ndarray:
    """Per-direction change probability exp(-lam*rho) / (1 + 2 exp(-lam*rho))."""
    e = np.exp(-lam * costs.costs)
    p = e / (1.0 + 2.0 * e)
    p[costs.wet] = 0.0
    return p


def solve_lambda(costs: CostMap, message_bits: float, rel_tol: float = 1e-7,
                 max_iter: int = 200) -> float:
    """Bisection for the lambda whose total ternary entropy equals ``message_bits``."""
    dry = ~costs.wet
    capacity = np.count_nonzero(dry) * np.log2(3.0)
    if message_bits <= 0:
        raise ValueError("message length must be positive")
    if message_bits >= capacity:
        raise ValueError(f"payload of {message_bits:.1f} bits infeasible; capacity {capacity:.1f}")

    def total(lam):
        return float(ternary_entropy(change_probabilities(costs, lam)).sum())

    lo, hi = 0.0, 1.0
    iters = 0
    while total(hi) > message_bits:
        lo, hi = hi, hi * 2.0
        iters += 1
        if iters > max_iter:
            raise RuntimeError("could not bracket lambda")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        m = total(mid)
        if abs(m - message_bits) <= rel_tol * message_bits:
            return mid
        if m > message_bits:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"lambda bisection did not converge in {max_iter} iterations")


def simulate_embedding(cover: GrayImage, costs: CostMap, payload_bpp: float, seed: int,
                       keep_probabilities: bool = False) -> EmbeddingResult:
    if not 0 < payload_bpp <= 1:
        raise ValueError(f"payload must lie in (0, 1] bpp, got {payload_bpp}")
    if costs.costs.shape != cover.pixels.shape:
        raise ValueError("cost map does not match cover dimensions")
    n = cover.pixels.size
    lam = solve_lambda(costs, payload_bpp * n)
    p = change_probabilities(costs, lam)
    u = np.random.default_rng(seed).random(p.shape)
    change = np.zeros(p.shape, dtype=np.int8)
    change[u < p] = 1
    change[(u >= p) & (u < 2 * p)] = -1
    x = cover.pixels.astype(np.int16)
    change[(x == 255) & (change == 1)] = -1
    change[(x == 0) & (change == -1)] = 1
    stego = GrayImage((x + change).astype(np.uint8))
    realized = float(ternary_entropy(p).sum()) / n
    return EmbeddingResult(stego, change, realized, lam, p if keep_probabilities else None)


# ---------------------------------------------------------------------------
# Change-map PGM codec and synthetic covers

def change_map_to_image(change: np.ndarray) -> GrayImage:
    out = np.full(change.shape, 127, dtype=np.uint8)
    out[change < 0] = 0
    out[change > 0] = 255
    return GrayImage(out)


def change_map_from_image(img: GrayImage) -> np.ndarray:
    px = img.pixels
    if not np.all(np.isin(px, (0, 127, 255))):
        raise ValueError("change-map image may only contain 0, 127 and 255")
    out = np.zeros(px.shape, dtype=np.int8)
    out[px == 0] = -1
    out[px == 255] = 1
    return out


def synthetic_cover(size: int, seed: int, block: int = 8, smooth_amplitude: float = 24.0,
                    noise_amplitude: float = 2.0, noise_fraction: float = 0.5) -> GrayImage:
    """Seeded cover with smooth and noisy regions.

    A uniform field of width ``smooth_amplitude`` around mid-gray is smoothed
    by a 5x5 box filter.  A random ``noise_fraction`` of the ``block`` x
    ``block`` tiles additionally receives unsmoothed uniform noise in
    +/- ``noise_amplitude``.  Passing 255 and a large noise amplitude gives
    full-range covers, on which +/-1 changes are statistically invisible.
    """
    if size < 1 or block < 1:
        raise ValueError("size and block must be positive")
    rng = np.random.default_rng(seed)
    lo = 127.5 - smooth_amplitude / 2
    smooth = ndimage.uniform_filter(rng.uniform(lo, lo + smooth_amplitude, (size, size)), size=5, mode="reflect")
    noisy = smooth + rng.uniform(-noise_amplitude, noise_amplitude, (size, size))
    nb = -(-size // block)
    tiles = np.zeros(nb * nb, dtype=bool)
    tiles[rng.permutation(nb * nb)[: int(round(nb * nb * noise_fraction))]] = True
    mask = np.kron(tiles.reshape(nb, nb), np.ones((block, block), dtype=bool))[:size, :size]
    img = np.where(mask, noisy, smooth)
    return GrayImage(np.clip(np.round(img), 0, 255).astype(np.uint8))
