"""Grayscale image I/O, dataset manifests and patch geometry."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np


class PgmError(ValueError):
    """Base class for PGM decoding failures."""


class PgmMagicError(PgmError):
    pass


class PgmMaxvalError(PgmError):
    pass


class PgmTruncatedError(PgmError):
    pass


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster. ``pixels`` is a read-only (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.round(arr)):
                raise ValueError("pixel values must be integers in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the pixel values."""
        return self.pixels.reshape(-1)

    @classmethod
    def from_flat(cls, width: int, height: int, data: Sequence[int]) -> "GrayImage":
        flat = np.asarray(data)
        if flat.size != width * height:
            raise ValueError(f"data length {flat.size} != {width}x{height}")
        return cls(flat.reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


# ---------------------------------------------------------------------------
# PGM

def _header_tokens(buf: bytes, count: int) -> Tuple[List[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset just past the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise PgmTruncatedError("header ended early")
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos < n and buf[pos:pos + 1].isspace():
        pos += 1
    return tokens, pos


def parse_pgm(buf: bytes) -> GrayImage:
    magic = buf[:2]
    if magic not in (b"P5", b"P2"):
        raise PgmMagicError(f"not a PGM file (magic {magic!r})")
    tokens, offset = _header_tokens(buf[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise PgmError(f"malformed header fields {tokens!r}") from exc
    if width < 1 or height < 1:
        raise PgmError(f"invalid dimensions {width}x{height}")
    if maxval < 1 or maxval > 255:
        raise PgmMaxvalError(f"maxval {maxval} not supported (must be 1..255)")

    n = width * height
    if magic == b"P5":
        payload = buf[offset:offset + n]
        if len(payload) < n:
            raise PgmTruncatedError(f"expected {n} pixel bytes, found {len(payload)}")
        values = np.frombuffer(payload, dtype=np.uint8)
    else:
        # strip comments from the ASCII raster before splitting
        lines = [ln.split(b"#", 1)[0] for ln in buf[offset:].splitlines()]
        words = b" ".join(lines).split()
        if len(words) < n:
            raise PgmTruncatedError(f"expected {n} ASCII samples, found {len(words)}")
        values = np.array([int(w) for w in words[:n]], dtype=np.int64)
    if values.max(initial=0) > maxval:
        raise PgmError("sample value exceeds maxval")
    return GrayImage(values.reshape(height, width).astype(np.uint8))


def read_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def pgm_bytes(img: GrayImage) -> bytes:
    header = b"P5\n%d %d\n255\n" % (img.width, img.height)
    return header + img.pixels.tobytes()


def write_pgm(img: GrayImage, path) -> None:
    """Write ``img`` as binary P5 with maxval 255 and no comments."""
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


def resize_half(img: GrayImage) -> GrayImage:
    """Halve both dimensions by 2x2 box averaging, rounding halves away from zero."""
    if img.width % 2 or img.height % 2:
        raise ValueError(f"resize_half needs even dimensions, got {img.width}x{img.height}")
    x = img.pixels.astype(np.int64)
    s = x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]
    # s >= 0, so floor((s + 2) / 4) rounds s/4 half away from zero
    return GrayImage(((s + 2) // 4).astype(np.uint8))


# ---------------------------------------------------------------------------
# Patch geometry

@dataclass(frozen=True)
class PatchGeometry:
    patch_size: int = 7
    stride: int = 1

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")

    @property
    def half(self) -> int:
        return self.patch_size // 2

    def interior_shape(self, height: int, width: int) -> Tuple[int, int]:
        """(rows, cols) of valid patch centers for an image of the given size."""
        if height < self.patch_size or width < self.patch_size:
            raise ValueError(
                f"image {width}x{height} smaller than patch {self.patch_size}x{self.patch_size}")
        return height - self.patch_size + 1, width - self.patch_size + 1


def interior_coords(img: GrayImage, geom: PatchGeometry = PatchGeometry()) -> Iterator[Tuple[int, int]]:
    """Row-major centers of every window that fits inside ``img``."""
    rows, cols = geom.interior_shape(img.height, img.width)  # raises before iteration starts
    return _coords(rows, cols, geom.half)


def _coords(rows: int, cols: int, h: int):
    for r in range(rows):
        for c in range(cols):
            yield r + h, c + h


# ---------------------------------------------------------------------------
# Dataset manifests

@dataclass(frozen=True)
class ManifestEntry:
    cover_path: str
    stego_path: str
    change_map_path: Optional[str] = None


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    split_seed: int = 0
    split: Tuple[float, float, float] = (0.4, 0.1, 0.5)

    def __len__(self):
        return len(self.entries)


def read_manifest(path, split_seed: int = 0,
                  split: Tuple[float, float, float] = (0.4, 0.1, 0.5)) -> DatasetManifest:
    """Parse a tab-separated manifest. Relative paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            parts = [p if os.path.isabs(p) else os.path.join(base, p) for p in parts]
            entries.append(ManifestEntry(*parts))
    return DatasetManifest(entries, split_seed, split)


def write_manifest(manifest: DatasetManifest, path, relative_to: Optional[str] = None) -> None:
    def fmt(p):
        return os.path.relpath(p, relative_to) if relative_to else p

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in manifest.entries:
            fields = [fmt(e.cover_path), fmt(e.stego_path)]
            if e.change_map_path is not None:
                fields.append(fmt(e.change_map_path))
            fh.write("\t".join(fields) + "\n")


def split_manifest(manifest: DatasetManifest):
    """Seeded pair-preserving partition into (train, val, test) manifests."""
    if not manifest.entries:
        raise ValueError("manifest is empty")
    fractions = np.asarray(manifest.split, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"split fractions {manifest.split} must be non-negative and sum to 1")
    n = len(manifest.entries)
    order = np.random.default_rng(manifest.split_seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    cuts = [np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
            np.sort(order[n_train + n_val:])]
    return tuple(
        DatasetManifest([manifest.entries[i] for i in idx], manifest.split_seed, manifest.split)
        for idx in cuts)
