"""Single-stage Saab filter banks (one DC kernel plus PCA-derived AC kernels)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .imaging import GrayImage

KERNEL_SIZES = (3, 5, 7)
FEATURE_DIM = sum(n * n for n in KERNEL_SIZES)  # 83


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * ||a||_F``. Returns ``(w, v)`` with eigenvalues sorted descending
    and eigenvectors in the columns of ``v``.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                g = 100.0 * abs(apq)
                app, aqq = a[p, p], a[q, q]
                if abs(app) + g == abs(app) and abs(aqq) + g == abs(aqq):
                    # below round-off of both diagonal entries
                    a[p, q] = a[q, p] = 0.0
                    continue
                diff = aqq - app
                if abs(diff) + g == abs(diff):
                    t = apq / diff
                else:
                    theta = 0.5 * diff / apq
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _mean_free_basis(dim: int) -> np.ndarray:
    """Orthonormal basis (dim x dim-1) of the complement of the all-ones vector (Helmert)."""
    basis = np.zeros((dim, dim - 1))
    for k in range(1, dim):
        basis[:k, k - 1] = 1.0
        basis[k, k - 1] = -k
        basis[:, k - 1] /= np.sqrt(k * (k + 1))
    return basis


def _fix_signs(kernels: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(kernels), axis=1)
    signs = np.sign(kernels[np.arange(len(kernels)), idx])
    signs[signs == 0] = 1.0
    return kernels * signs[:, None]


@dataclass(frozen=True)
class SaabBank:
    """Kernels are rows of ``kernels`` (n*n taps each); row 0 is the DC kernel."""

    kernel_size: int
    kernels: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_kernels(self) -> int:
        return self.kernels.shape[0]

    def transform(self, patches: np.ndarray) -> np.ndarray:
        """Responses of flattened n x n ``patches`` (N, n*n) to every kernel."""
        return patches @ self.kernels.T


def fit_bank(patches: np.ndarray, n: int) -> SaabBank:
    """Fit a Saab bank of n x n kernels on a stack of n x n patches."""
    x = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    d = n * n
    if x.shape[1] != d:
        raise ValueError(f"patches have {x.shape[1]} taps, expected {d}")
    if x.shape[0] < d:
        raise ValueError(f"need at least {d} patches to fit a {n}x{n} bank, got {x.shape[0]}")
    residual = x - x.mean(axis=1, keepdims=True)
    residual -= residual.mean(axis=0)
    cov = residual.T @ residual / x.shape[0]
    if not np.any(cov):
        raise ValueError("patches carry no AC energy (all constant)")
    basis = _mean_free_basis(d)
    reduced = basis.T @ cov @ basis
    reduced = 0.5 * (reduced + reduced.T)
    w, v = jacobi_eigh(reduced)
    ac = _fix_signs((basis @ v).T)
    dc = np.full((1, d), 1.0 / n)
    return SaabBank(n, np.vstack([dc, ac]), np.maximum(w, 0.0))


@dataclass(frozen=True)
class SaabTriple:
    banks: Tuple[SaabBank, SaabBank, SaabBank]

    @property
    def feature_dim(self) -> int:
        return sum(b.n_kernels for b in self.banks)

    @property
    def kernel_sizes(self) -> np.ndarray:
        """Kernel size of the bank each feature dimension comes from."""
        return np.concatenate([np.full(b.n_kernels, b.kernel_size) for b in self.banks])


def _centre_crop(patches: np.ndarray, n: int) -> np.ndarray:
    p = patches.shape[-1]
    o = (p - n) // 2
    return patches[..., o:o + n, o:o + n]


def fit_triple(patches7: np.ndarray, cap: int = 100_000, seed: int = 0) -> SaabTriple:
    """Fit the 3x3, 5x5 and 7x7 banks on the centred crops of 7x7 patches."""
    patches7 = np.asarray(patches7)
    if len(patches7) > cap:
        keep = np.sort(np.random.default_rng(seed).choice(len(patches7), cap, replace=False))
        patches7 = patches7[keep]
    return SaabTriple(tuple(fit_bank(_centre_crop(patches7, n), n) for n in KERNEL_SIZES))


def patch_features(patches7: np.ndarray, triple: SaabTriple) -> np.ndarray:
    """83-D features of a stack of 7x7 patches (N, 7, 7)."""
    x = np.asarray(patches7, dtype=np.float64)
    return np.hstack([
        bank.transform(_centre_crop(x, bank.kernel_size).reshape(len(x), -1))
        for bank in triple.banks
    ])


def extract_features(img: GrayImage, center: Tuple[int, int], triple: SaabTriple) -> np.ndarray:
    r, c = center
    if r < 3 or c < 3 or r > img.height - 4 or c > img.width - 4:
        raise ValueError(f"center {center} too close to the border for a 7x7 window")
    patch = img.pixels[r - 3:r + 4, c - 3:c + 4]
    return patch_features(patch[None], triple)[0]


def image_patches(pixels: np.ndarray, size: int = 7) -> np.ndarray:
    """Read-only (rows, cols, size, size) view of every interior window."""
    return np.lib.stride_tricks.sliding_window_view(pixels, (size, size))
