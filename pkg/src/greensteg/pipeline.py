"""End-to-end training, detection and evaluation on cover/stego pairs."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import anomaly, fusion, spots
from .anomaly import AnomalyScoreMap, GroupSpec, TrainingPair
from .imaging import (DatasetManifest, GrayImage, ManifestEntry, read_pgm, resize_half,
                      write_manifest, write_pgm)
from .model import GsModel, RunConfig, fingerprint
from .stego_sim import (change_map_from_image, change_map_to_image, compute_costs,
                        simulate_embedding, synthetic_cover)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """A training stage failed; ``stage`` names it."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"{stage}: {msg}")
        self.stage = stage


@dataclass
class Pair:
    cover: GrayImage
    stego: GrayImage
    change_map: np.ndarray


def preprocess(img: GrayImage, resize: str) -> GrayImage:
    if resize == "half":
        return resize_half(img)
    if resize != "none":
        raise ValueError(f"unknown resize mode {resize!r}")
    return img


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across worker processes; order is preserved."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# ---------------------------------------------------------------------------
# Data generation and loading

def _embed_one(args, scheme: str, payload: float, seed: int) -> Pair:
    i, c = args
    res = simulate_embedding(c, compute_costs(c, scheme), payload, derive_seed(seed, i))
    return Pair(c, res.stego, res.change_map)


def embed_pairs(covers: Sequence[GrayImage], scheme: str, payload: float, seed: int,
                jobs: int = 1) -> List[Pair]:
    return parallel_map(partial(_embed_one, scheme=scheme, payload=payload, seed=seed),
                        list(enumerate(covers)), jobs)


def synthetic_covers(n: int, size: int, seed: int) -> List[GrayImage]:
    return [synthetic_cover(size, derive_seed(seed, 7919, i)) for i in range(n)]


def write_dataset(pairs: Sequence[Pair], out_dir: str, names: Optional[Sequence[str]] = None) -> str:
    """Write covers, stegos and change maps as PGM plus a manifest; returns the manifest path."""
    for sub in ("cover", "stego", "change"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    entries = []
    for i, p in enumerate(pairs):
        name = names[i] if names is not None else f"{i:05d}.pgm"
        paths = [os.path.join(out_dir, sub, name) for sub in ("cover", "stego", "change")]
        write_pgm(p.cover, paths[0])
        write_pgm(p.stego, paths[1])
        write_pgm(change_map_to_image(p.change_map), paths[2])
        entries.append(ManifestEntry(*paths))
    path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(DatasetManifest(entries), path, relative_to=out_dir)
    return path


def load_pairs(manifest: DatasetManifest, resize: str = "none") -> List[Pair]:
    out = []
    for e in manifest.entries:
        cover = read_pgm(e.cover_path)
        stego = read_pgm(e.stego_path)
        if cover.pixels.shape != stego.pixels.shape:
            raise ValueError(f"{e.stego_path}: size differs from its cover")
        if e.change_map_path is not None:
            change = change_map_from_image(read_pgm(e.change_map_path))
        else:
            change = (stego.pixels.astype(np.int16) - cover.pixels.astype(np.int16)).astype(np.int8)
        if resize != "none":
            # changes are not defined after resampling; recover them from the pixel difference
            cover, stego = preprocess(cover, resize), preprocess(stego, resize)
            change = np.sign(stego.pixels.astype(np.int16) - cover.pixels.astype(np.int16)).astype(np.int8)
        out.append(Pair(cover, stego, change))
    return out


# ---------------------------------------------------------------------------
# Training

@dataclass
class FitArtifacts:
    dft_reports: Dict[int, object] = field(default_factory=dict)
    grid: Optional[fusion.GridSearchResult] = None
    timings: Dict[str, float] = field(default_factory=dict)
    round_auc: Dict[int, Tuple[float, float]] = field(default_factory=dict)


def _group_spec(pairs: Sequence[TrainingPair], cfg: RunConfig) -> GroupSpec:
    if cfg.grouping == "fixed":
        return GroupSpec.fixed_width(cfg.group_count, cfg.group_width, cfg.cost_window)
    probe = GroupSpec.fixed_width(1, 1.0, cfg.cost_window)
    costs = np.concatenate([anomaly.patch_cost_map(p.costs, probe, cfg.patch_size).ravel() for p in pairs])
    return GroupSpec.from_quantiles(costs, cfg.group_count, cfg.cost_window)


def score_maps(imgs: Sequence[GrayImage], scheme: str, models, spec: GroupSpec,
               patch_size: int = 7) -> List[AnomalyScoreMap]:
    return [anomaly.score_image(im, compute_costs(im, scheme), models, spec, patch_size) for im in imgs]


def train_module1(train: Sequence[Pair], cfg: RunConfig, art: Optional[FitArtifacts] = None):
    """Group spec plus one Group1Model (or None) per group."""
    tpairs = [TrainingPair(p.cover, p.stego, p.change_map, compute_costs(p.cover, cfg.scheme)) for p in train]
    spec = _group_spec(tpairs, cfg)
    samples = anomaly.sample_pairs(tpairs, spec, cfg.cap_per_group, cfg.seed, cfg.patch_size)
    models: List[Optional[anomaly.Group1Model]] = []
    for s in samples:
        if 2 * len(s) < 49:  # a 7x7 Saab bank needs 49 patches
            log.warning("stage=module1 group=%d positives=%d status=untrainable", s.group_id, len(s))
            models.append(None)
            continue
        try:
            m = anomaly.train_group(s, cfg.k, cfg.gbdt, cfg.score_bins, cfg.saab_cap,
                                    derive_seed(cfg.seed, s.group_id), cfg.round2_routing, cfg.round2_offset)
        except ValueError as exc:
            raise TrainingError("module1", f"group {s.group_id}: {exc}") from exc
        if art is not None:
            art.dft_reports[s.group_id] = m.dft
        models.append(m)
    return spec, models


def train_module2(train_cover, train_stego, train_changes, val_cover, val_stego, val_changes,
                  cfg: RunConfig) -> List[Optional[spots.Group2Model]]:
    """Classifiers fitted on training-split score maps, cutoffs tuned on validation maps."""
    G = cfg.group_count
    tr = spots.collect_blocks(train_cover, train_stego, train_changes, G, cfg.spot_cap_per_group,
                              derive_seed(cfg.seed, 2), cfg.patch_size)
    va = spots.collect_blocks(val_cover, val_stego, val_changes, G, cfg.spot_cap_per_group,
                              derive_seed(cfg.seed, 3), cfg.patch_size)
    out: List[Optional[spots.Group2Model]] = []
    for g in range(G):
        if len(tr[g]) == 0:
            log.warning("stage=module2 group=%d status=no_positive_blocks", g)
            out.append(None)
            continue
        out.append(spots.train_group2(g, tr[g], train_cover, train_stego, va[g], val_cover, val_stego, cfg.gbdt,
                                      cfg.spot_max_fraction))
    return out


def module3_grid(cfg: RunConfig, height: int, width: int) -> List[int]:
    if cfg.scale_grid:
        return fusion.scaled_grid(height, width, cfg.patch_size, cfg.m_grid, cfg.m_grid_min)
    return list(cfg.m_grid)


def fit(train: Sequence[Pair], val: Sequence[Pair], cfg: RunConfig,
        art: Optional[FitArtifacts] = None) -> GsModel:
    """Train all three stages; Module 1 on ``train``, Module 2 on both, Module 3 on ``val``."""
    if not train or not val:
        raise TrainingError("split", "need non-empty training and validation pairs")
    art = art if art is not None else FitArtifacts()
    t0 = time.perf_counter()
    spec, g1 = train_module1(train, cfg, art)
    if all(m is None for m in g1):
        raise TrainingError("module1", "no group had enough positive patches")
    art.timings["module1"] = time.perf_counter() - t0
    log.info("stage=module1 seconds=%.2f groups=%d trained=%d", art.timings["module1"],
             spec.group_count, sum(m is not None for m in g1))

    t0 = time.perf_counter()
    ps = cfg.patch_size
    tc = score_maps([p.cover for p in train], cfg.scheme, g1, spec, ps)
    ts = score_maps([p.stego for p in train], cfg.scheme, g1, spec, ps)
    vc = score_maps([p.cover for p in val], cfg.scheme, g1, spec, ps)
    vs = score_maps([p.stego for p in val], cfg.scheme, g1, spec, ps)
    g2 = train_module2(tc, ts, [p.change_map for p in train], vc, vs, [p.change_map for p in val], cfg)
    if all(m is None for m in g2):
        raise TrainingError("module2", "no group had positive spot blocks")
    art.timings["module2"] = time.perf_counter() - t0
    log.info("stage=module2 seconds=%.2f", art.timings["module2"])

    t0 = time.perf_counter()
    val_spots = [spots.detect_spots(m, g2) for m in vc + vs]
    labels = np.r_[np.zeros(len(vc), dtype=np.int64), np.ones(len(vs), dtype=np.int64)]
    h, w = val[0].cover.height, val[0].cover.width
    try:
        grid = module3_grid(cfg, h, w)
        art.grid = fusion.grid_search_m(val_spots, labels, grid, cfg.gbdt, derive_seed(cfg.seed, 4))
        fm = fusion.train_fusion(val_spots, labels, art.grid.chosen, cfg.gbdt)
    except ValueError as exc:
        raise TrainingError("module3", str(exc)) from exc
    art.timings["module3"] = time.perf_counter() - t0
    log.info("stage=module3 seconds=%.2f m_values=%s", art.timings["module3"],
             ",".join(map(str, fm.m_values)))

    digest = fingerprint([b for p in list(train) + list(val)
                          for b in (p.cover.pixels.tobytes(), p.stego.pixels.tobytes())])
    prov = {"seed": str(cfg.seed), "dataset": digest, "config": cfg.to_text()}
    return GsModel(cfg.scheme, cfg.resize, cfg.patch_size, spec, g1, g2, fm, prov)


# ---------------------------------------------------------------------------
# Detection and evaluation

@dataclass
class Detection:
    label: int
    scores: np.ndarray
    spots: spots.SpotList
    score_map: AnomalyScoreMap


def detect(model: GsModel, img: GrayImage, preprocessed: bool = False) -> Detection:
    if not preprocessed:
        img = preprocess(img, model.resize)
    if img.height < model.patch_size or img.width < model.patch_size:
        raise ValueError(f"image {img.width}x{img.height} smaller than {model.patch_size}x{model.patch_size}")
    smap = anomaly.score_image(img, compute_costs(img, model.scheme), model.group1,
                               model.group_spec, model.patch_size)
    sl = spots.detect_spots(smap, model.group2)
    label, s = fusion.classify_image(sl, model.fusion)
    return Detection(label, s, sl, smap)


def _label(img: GrayImage, model: GsModel) -> int:
    return detect(model, img, preprocessed=True).label


def evaluate_pairs(model: GsModel, pairs: Sequence[Pair], jobs: int = 1) -> fusion.EvalReport:
    imgs = [im for p in pairs for im in (p.cover, p.stego)]
    labels = parallel_map(partial(_label, model=model), imgs, jobs)
    truth = [0, 1] * len(pairs)
    return fusion.evaluate(list(zip(labels, truth)))
