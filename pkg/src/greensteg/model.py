"""Run configuration and the persisted detector container.

The container starts with ``b"GSMD"`` and a format version, followed by
tagged, length-prefixed sections.  Every float is stored as 64-bit
little-endian, so a loaded model predicts bit-identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import gbdt
from .anomaly import GroupSpec, Group1Model
from .dft import DftReport
from .fusion import FusionModel
from .saab import SaabBank, SaabTriple
from .spots import Group2Model, MatchedFilter

MAGIC = b"GSMD"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Run configuration

@dataclass(frozen=True)
class RunConfig:
    patch_size: int = 7
    group_count: int = 10
    cost_window: int = 3
    grouping: str = "quantile"
    group_width: float = 1.0
    k: int = 15
    n_trees: int = 100
    max_depth: int = 2
    learning_rate: float = 0.3
    lambda_reg: float = 1.0
    min_child_weight: float = 1.0
    gbdt_bins: int = 32
    score_bins: int = 10
    round2_routing: str = "own"
    round2_offset: bool = True
    saab_cap: int = 100_000
    cap_per_group: int = 50_000
    spot_cap_per_group: int = 50_000
    spot_max_fraction: float = 0.25
    m_grid_start: int = 100
    m_grid_stop: int = 1000
    m_grid_step: int = 50
    m_grid_min: int = 5
    scale_grid: bool = True
    split_train: float = 0.4
    split_val: float = 0.1
    split_test: float = 0.5
    split_seed: int = 0
    seed: int = 0
    scheme: str = "hill"
    payload: float = 0.4
    resize: str = "none"

    def __post_init__(self):
        if self.patch_size != 7:
            raise ConfigError("patch_size must be 7 (the Saab banks are 3x3, 5x5 and 7x7 crops)")
        if self.group_count < 1:
            raise ConfigError("group_count must be positive")
        if self.cost_window < 1 or self.cost_window % 2 == 0 or self.cost_window > self.patch_size:
            raise ConfigError("cost_window must be an odd integer no larger than patch_size")
        if self.grouping not in ("quantile", "fixed"):
            raise ConfigError("grouping must be 'quantile' or 'fixed'")
        if self.round2_routing not in ("own", "paired"):
            raise ConfigError("round2_routing must be 'own' or 'paired'")
        if self.resize not in ("none", "half"):
            raise ConfigError("resize must be 'none' or 'half'")
        if self.scheme not in ("hill", "suniward"):
            raise ConfigError("scheme must be 'hill' or 'suniward'")
        if not 0 < self.k <= 83:
            raise ConfigError("k must lie in 1..83")
        if abs(self.split_train + self.split_val + self.split_test - 1) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if self.m_grid_step <= 0 or self.m_grid_start > self.m_grid_stop:
            raise ConfigError("invalid M grid")

    @property
    def gbdt(self) -> gbdt.GbdtConfig:
        return gbdt.GbdtConfig(self.n_trees, self.max_depth, self.learning_rate, self.lambda_reg,
                               self.min_child_weight, self.gbdt_bins, self.seed)

    @property
    def split(self) -> Tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    @property
    def m_grid(self) -> Tuple[int, ...]:
        return tuple(range(self.m_grid_start, self.m_grid_stop + 1, self.m_grid_step))

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


CONFIG_DOCS: Dict[str, str] = {
    "patch_size": "side of the square patch around each scored pixel",
    "group_count": "number of cost groups",
    "cost_window": "odd window over which pixel costs are averaged into a patch cost",
    "grouping": "quantile (equal-mass groups) or fixed (unit-width cost ranges)",
    "group_width": "cost range width per group in fixed mode",
    "k": "Saab dimensions kept by the discriminant test",
    "n_trees": "boosting rounds per classifier",
    "max_depth": "tree depth",
    "learning_rate": "shrinkage",
    "lambda_reg": "L2 penalty on leaf values",
    "min_child_weight": "minimum hessian mass per leaf",
    "gbdt_bins": "quantile bins per feature for split search",
    "score_bins": "uniform score intervals for round-2 classifiers",
    "round2_routing": "own: bin training samples by their own round-1 score; paired: negatives follow their positive",
    "round2_offset": "round-2 classifiers continue from the round-1 log-odds",
    "saab_cap": "max patches used to fit each Saab triple",
    "cap_per_group": "max positive (and negative) patches per group",
    "spot_cap_per_group": "max positive (and negative) spot blocks per group",
    "spot_max_fraction": "spot cutoffs may flag at most this fraction of validation cover blocks (1.0: pure F1)",
    "m_grid_start": "first M of the top-M grid (256x256 scale)",
    "m_grid_stop": "last M of the top-M grid",
    "m_grid_step": "M grid step",
    "m_grid_min": "smallest M after rescaling",
    "scale_grid": "rescale the M grid to the training image interior area",
    "split_train": "fraction of pairs for training",
    "split_val": "fraction of pairs for validation",
    "split_test": "fraction of pairs for testing",
    "split_seed": "seed of the pair split",
    "seed": "master seed for sampling and learners",
    "scheme": "cost function: hill or suniward",
    "payload": "embedding rate in bits per pixel",
    "resize": "preprocessing: none or half (2x2 box average)",
}


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment; unknown keys raise."""
    kinds = {f.name: type(f.default) for f in dataclasses.fields(RunConfig)}
    updates = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        updates[key] = _coerce(key, value, kinds[key])
    return dataclasses.replace(base or RunConfig(), **updates)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Detector container

@dataclass
class GsModel:
    scheme: str
    resize: str
    patch_size: int
    group_spec: GroupSpec
    group1: List[Optional[Group1Model]]
    group2: List[Optional[Group2Model]]
    fusion: FusionModel
    provenance: Dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def group_count(self) -> int:
        return self.group_spec.group_count


class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def arr(self, a, dt):
        a = np.asarray(a)
        self.u32(a.size)
        self.parts.append(a.astype(dt).tobytes())

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def model(self, m: gbdt.GbdtModel):
        b = gbdt.to_bytes(m)
        self.u32(len(b))
        self.parts.append(b)

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, fmt):
        try:
            v = struct.unpack_from(fmt, self.buf, self.pos)
        except struct.error:
            raise ModelFormatError("model file truncated") from None
        self.pos += struct.calcsize(fmt)
        return v[0]

    def u8(self):
        return self._take("<B")

    def u32(self):
        return self._take("<I")

    def f64(self):
        return self._take("<d")

    def arr(self, dt):
        n = self.u32()
        size = np.dtype(dt).itemsize * n
        if self.pos + size > len(self.buf):
            raise ModelFormatError("model file truncated")
        a = np.frombuffer(self.buf, dtype=dt, count=n, offset=self.pos).copy()
        self.pos += size
        return a

    def text(self) -> str:
        n = self.u32()
        s = self.buf[self.pos:self.pos + n]
        self.pos += n
        return s.decode("utf-8")

    def model(self) -> gbdt.GbdtModel:
        n = self.u32()
        m, end = gbdt.from_bytes(self.buf[self.pos:self.pos + n])
        if end != n:
            raise ModelFormatError("classifier section length mismatch")
        self.pos += n
        return m


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _write_group1(w: _Writer, g: Group1Model):
    w.u32(g.group_id)
    for bank in g.saab.banks:
        w.u32(bank.kernel_size)
        w.arr(bank.kernels, "<f8")
        w.arr(bank.eigenvalues, "<f8")
    w.arr(g.selected, "<i4")
    w.model(g.round1)
    w.u8(int(g.round2_offset))
    w.u32(len(g.round2))
    for m in g.round2:
        w.u8(m is not None)
        if m is not None:
            w.model(m)
    has_dft = g.dft is not None
    w.u8(has_dft)
    if has_dft:
        w.arr(g.dft.losses, "<f8")
        w.arr(g.dft.degenerate, "<u1")


def _read_group1(r: _Reader) -> Group1Model:
    gid = r.u32()
    banks = []
    for _ in range(3):
        n = r.u32()
        kernels = r.arr("<f8").reshape(n * n, n * n)
        eig = r.arr("<f8")
        banks.append(SaabBank(n, kernels, eig))
    selected = r.arr("<i4").astype(np.int64)
    round1 = r.model()
    offset = bool(r.u8())
    round2 = [r.model() if r.u8() else None for _ in range(r.u32())]
    dft = None
    if r.u8():
        losses = r.arr("<f8")
        degenerate = r.arr("<u1").astype(bool)
        dft = DftReport(losses, selected.copy(), degenerate)
    return Group1Model(gid, SaabTriple(tuple(banks)), selected, round1, round2, offset, dft)


def _write_group2(w: _Writer, g: Group2Model):
    w.u32(g.group_id)
    w.arr(g.filter.taps, "<f8")
    w.f64(g.threshold)
    w.f64(g.val_f1)
    w.model(g.classifier)


def _read_group2(r: _Reader) -> Group2Model:
    gid = r.u32()
    taps = r.arr("<f8").reshape(3, 3)
    t = r.f64()
    f1 = r.f64()
    return Group2Model(gid, MatchedFilter(gid, taps), r.model(), t, f1)


def serialize(model: GsModel) -> bytes:
    meta = _Writer()
    meta.text(model.scheme)
    meta.text(model.resize)
    meta.u32(model.patch_size)
    keys = sorted(model.provenance)
    meta.u32(len(keys))
    for k in keys:
        meta.text(k)
        meta.text(str(model.provenance[k]))

    groups = _Writer()
    b = model.group_spec.boundaries
    groups.arr(b, "<f8")
    groups.u32(model.group_spec.cost_window)

    m1 = _Writer()
    m1.u32(len(model.group1))
    for g in model.group1:
        m1.u8(g is not None)
        if g is not None:
            _write_group1(m1, g)

    m2 = _Writer()
    m2.u32(len(model.group2))
    for g in model.group2:
        m2.u8(g is not None)
        if g is not None:
            _write_group2(m2, g)

    m3 = _Writer()
    m3.u32(len(model.fusion.m_values))
    for m, clf in zip(model.fusion.m_values, model.fusion.classifiers):
        m3.u32(m)
        m3.model(clf)

    return b"".join([
        MAGIC, struct.pack("<I", model.format_version),
        _section(b"META", meta.bytes()), _section(b"GRPS", groups.bytes()),
        _section(b"MOD1", m1.bytes()), _section(b"MOD2", m2.bytes()),
        _section(b"MOD3", m3.bytes()),
    ])


def _sections(buf: bytes) -> Dict[bytes, bytes]:
    out = {}
    pos = 8
    while pos < len(buf):
        if pos + 12 > len(buf):
            raise ModelFormatError("model file truncated")
        tag = buf[pos:pos + 4]
        (n,) = struct.unpack_from("<Q", buf, pos + 4)
        pos += 12
        if pos + n > len(buf):
            raise ModelFormatError(f"section {tag!r} truncated")
        out[tag] = buf[pos:pos + n]
        pos += n
    return out


def deserialize(buf: bytes) -> GsModel:
    if buf[:4] != MAGIC:
        raise ModelFormatError("not a GSMD model file")
    if len(buf) < 8:
        raise ModelFormatError("model file truncated")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    sec = _sections(buf)
    for tag in (b"META", b"GRPS", b"MOD1", b"MOD2", b"MOD3"):
        if tag not in sec:
            raise ModelFormatError(f"missing section {tag.decode()}")
    r = _Reader(sec[b"META"])
    scheme, resize, patch = r.text(), r.text(), r.u32()
    prov = {}
    for _ in range(r.u32()):
        k = r.text()
        prov[k] = r.text()
    r = _Reader(sec[b"GRPS"])
    spec = GroupSpec(r.arr("<f8"), r.u32())
    r = _Reader(sec[b"MOD1"])
    group1 = [_read_group1(r) if r.u8() else None for _ in range(r.u32())]
    r = _Reader(sec[b"MOD2"])
    group2 = [_read_group2(r) if r.u8() else None for _ in range(r.u32())]
    r = _Reader(sec[b"MOD3"])
    ms, clfs = [], []
    for _ in range(r.u32()):
        ms.append(r.u32())
        clfs.append(r.model())
    return GsModel(scheme, resize, patch, spec, group1, group2, FusionModel(ms, clfs), prov, version)


def save_model(model: GsModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path) -> GsModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def fingerprint(parts) -> str:
    """SHA-256 over a sequence of byte strings."""
    h = hashlib.sha256()
    for p in parts:
        h.update(struct.pack("<Q", len(p)))
        h.update(p)
    return h.hexdigest()
