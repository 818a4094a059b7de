import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from greensteg.imaging import (DatasetManifest, GrayImage, ManifestEntry, PatchGeometry, PgmError,
                               PgmMagicError, PgmMaxvalError, PgmTruncatedError, interior_coords,
                               parse_pgm, pgm_bytes, read_manifest, read_pgm, resize_half,
                               split_manifest, write_manifest, write_pgm)


def test_p5_roundtrip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(0)
    img = GrayImage(rng.integers(0, 256, (13, 17), dtype=np.uint8))
    raw = pgm_bytes(img)
    assert pgm_bytes(parse_pgm(raw)) == raw
    path = tmp_path / "a.pgm"
    write_pgm(img, path)
    assert path.read_bytes() == raw
    assert read_pgm(path) == img


def test_p2_and_comments():
    buf = b"P2\n# a comment\n3 2\n# another\n255\n0 1 2 # trailing\n3 4 255\n"
    img = parse_pgm(buf)
    assert img.width == 3 and img.height == 2
    assert img.data.tolist() == [0, 1, 2, 3, 4, 255]
    # comments are never written back
    assert b"#" not in pgm_bytes(img)


def test_p5_with_comment_in_header():
    buf = b"P5 # c\n2 # w\n1\n255\n" + bytes([7, 9])
    assert parse_pgm(buf).data.tolist() == [7, 9]


@pytest.mark.parametrize("buf,err", [
    (b"P6\n1 1\n255\n\x00", PgmMagicError),
    (b"P5\n1 1\n65535\n\x00\x00", PgmMaxvalError),
    (b"P5\n2 2\n255\n\x00", PgmTruncatedError),
    (b"P5\n2", PgmTruncatedError),
    (b"P2\n2 1\n255\n5", PgmTruncatedError),
    (b"P2\n1 1\n100\n101", PgmError),
])
def test_pgm_errors(buf, err):
    with pytest.raises(err):
        parse_pgm(buf)


def test_from_flat_and_hash():
    a = GrayImage.from_flat(2, 2, [1, 2, 3, 4])
    b = GrayImage(np.array([[1, 2], [3, 4]]))
    assert a == b and hash(a) == hash(b)
    with pytest.raises(ValueError):
        GrayImage.from_flat(2, 2, [1, 2, 3])
    with pytest.raises(ValueError):
        GrayImage(np.array([[256]]))


def test_resize_half_examples():
    assert resize_half(GrayImage.from_flat(2, 2, [10, 20, 30, 40])).data.tolist() == [25]
    const = resize_half(GrayImage(np.full((512, 512), 77, np.uint8)))
    assert const.pixels.shape == (256, 256) and np.all(const.pixels == 77)
    # half rounds away from zero: mean 0.5 -> 1, 2.5 -> 3
    assert resize_half(GrayImage.from_flat(2, 2, [0, 0, 1, 1])).data.tolist() == [1]
    assert resize_half(GrayImage.from_flat(2, 2, [2, 2, 3, 3])).data.tolist() == [3]
    with pytest.raises(ValueError):
        resize_half(GrayImage(np.zeros((3, 4), np.uint8)))


def test_resize_half_matches_block_mean_oracle():
    img = GrayImage(np.arange(16, dtype=np.uint8).reshape(4, 4) * 13)
    out = resize_half(img)
    for i in range(2):
        for j in range(2):
            block = [int(img.pixels[2 * i + a, 2 * j + b]) for a in range(2) for b in range(2)]
            mean = sum(block) / 4
            expect = int(np.floor(mean + 0.5))
            assert out.pixels[i, j] == expect


def test_interior_coords_examples():
    assert sum(1 for _ in interior_coords(GrayImage(np.zeros((256, 256), np.uint8)))) == 62_500
    assert list(interior_coords(GrayImage(np.zeros((7, 7), np.uint8)))) == [(3, 3)]
    img = GrayImage(np.zeros((8, 9), np.uint8))  # width 9, height 8
    expect = [(r, c) for r in range(3, 8 - 3) for c in range(3, 9 - 3)]
    assert list(interior_coords(img)) == expect and len(expect) == 6
    with pytest.raises(ValueError):
        interior_coords(GrayImage(np.zeros((6, 9), np.uint8)))
    with pytest.raises(ValueError):
        PatchGeometry(patch_size=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(7, 40), st.integers(7, 40))
def test_interior_count_formula(h, w):
    coords = list(interior_coords(GrayImage(np.zeros((h, w), np.uint8))))
    assert len(coords) == (w - 6) * (h - 6)
    assert all(3 <= r <= h - 4 and 3 <= c <= w - 4 for r, c in coords)


def _manifest(n):
    return DatasetManifest([ManifestEntry(f"c{i}", f"s{i}", f"m{i}") for i in range(n)])


def test_split_reference_sizes():
    m = _manifest(10_000)
    m.split = (0.5, 0.0, 0.5)
    tr, va, te = split_manifest(m)
    assert (len(tr), len(va), len(te)) == (5000, 0, 5000)


def test_split_determinism_and_partition():
    m = _manifest(10)
    m.split = (0.8, 0.2, 0.0)
    a = split_manifest(m)
    assert [e.cover_path for e in split_manifest(m)[0].entries] == [e.cover_path for e in a[0].entries]
    m2 = _manifest(10)
    m2.split, m2.split_seed = (0.8, 0.2, 0.0), 1
    b = split_manifest(m2)
    assert {e.cover_path for e in a[0].entries} != {e.cover_path for e in b[0].entries}
    for parts in (a, b):
        seen = [e for p in parts for e in p.entries]
        assert sorted(e.cover_path for e in seen) == sorted(e.cover_path for e in m.entries)
        assert all(e.stego_path == "s" + e.cover_path[1:] for e in seen)


def test_split_errors():
    m = _manifest(4)
    m.split = (0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        split_manifest(m)
    with pytest.raises(ValueError):
        split_manifest(DatasetManifest([]))


def test_manifest_roundtrip_relative(tmp_path):
    entries = [ManifestEntry(str(tmp_path / "c" / "a.pgm"), str(tmp_path / "s" / "a.pgm")),
               ManifestEntry(str(tmp_path / "c" / "b.pgm"), str(tmp_path / "s" / "b.pgm"), str(tmp_path / "m" / "b.pgm"))]
    path = tmp_path / "manifest.tsv"
    write_manifest(DatasetManifest(entries), path, relative_to=str(tmp_path))
    assert "\tc" not in path.read_text() and "s/a.pgm" in path.read_text()
    back = read_manifest(path)
    assert [(e.cover_path, e.stego_path, e.change_map_path) for e in back.entries] == \
        [(os.path.normpath(e.cover_path), os.path.normpath(e.stego_path),
          e.change_map_path and os.path.normpath(e.change_map_path)) for e in entries]
    bad = tmp_path / "bad.tsv"
    bad.write_text("only-one-field\n")
    with pytest.raises(ValueError):
        read_manifest(bad)
