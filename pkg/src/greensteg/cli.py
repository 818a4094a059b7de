"""Command-line front end: embed, fit, detect, eval, budget.

Results go to stdout, key=value log records to stderr.  Exit codes: 0
success, 1 usage error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from functools import partial
from typing import List, Optional

import numpy as np

from . import budget, pipeline
from .anomaly import score_heatmap, score_plane_bytes
from .dft import write_loss_csv
from .imaging import PgmError, read_manifest, read_pgm, split_manifest, write_pgm
from .model import ConfigError, ModelFormatError, RunConfig, load_config, load_model, save_model

log = logging.getLogger("greensteg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    for name in ("seed", "scheme", "payload"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    return cfg.replace(**over) if over else cfg


def _split(cfg: RunConfig, manifest_path: str):
    m = read_manifest(manifest_path, cfg.split_seed, cfg.split)
    return m, split_manifest(m)


# ---------------------------------------------------------------------------

def cmd_embed(args) -> int:
    cfg = _config(args)
    if args.out is None:
        raise UsageError("embed needs --out")
    if (args.synthetic is None) == (args.covers is None):
        raise UsageError("give exactly one of --synthetic N or --covers DIR")
    t0 = time.perf_counter()
    if args.synthetic is not None:
        covers = pipeline.synthetic_covers(args.synthetic, args.size, cfg.seed)
        names = None
    else:
        names = sorted(f for f in os.listdir(args.covers) if f.lower().endswith(".pgm"))
        if not names:
            raise ValueError(f"no .pgm files in {args.covers}")
        covers = [pipeline.preprocess(read_pgm(os.path.join(args.covers, n)), cfg.resize) for n in names]
    pairs = pipeline.embed_pairs(covers, cfg.scheme, cfg.payload, cfg.seed, args.jobs)
    path = pipeline.write_dataset(pairs, args.out, names)
    rate = float(np.mean([np.mean(p.change_map != 0) for p in pairs]))
    log.info("stage=embed pairs=%d scheme=%s payload=%s change_rate=%.6f seconds=%.2f",
             len(pairs), cfg.scheme, cfg.payload, rate, time.perf_counter() - t0)
    print(path)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config(args)
    if args.model is None:
        raise UsageError("fit needs --model")
    _, (train_m, val_m, _test) = _split(cfg, args.manifest)
    if not train_m.entries or not val_m.entries:
        raise ValueError("manifest too small for a training and a validation split")
    train = pipeline.load_pairs(train_m, cfg.resize)
    val = pipeline.load_pairs(val_m, cfg.resize)
    art = pipeline.FitArtifacts()
    model = pipeline.fit(train, val, cfg, art)
    save_model(model, args.model)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for g, rep in sorted(art.dft_reports.items()):
            ks = model.group1[g].saab.kernel_sizes
            write_loss_csv(rep, os.path.join(args.out, f"dft_group{g:02d}.csv"), ks)
        art.grid.write_csv(os.path.join(args.out, "m_curve.csv"))
    log.info("stage=fit seconds=%.2f model=%s", sum(art.timings.values()), args.model)
    print(args.model)
    return EXIT_OK


def _detect_path(path: str, model) -> pipeline.Detection:
    return pipeline.detect(model, read_pgm(path))


def cmd_detect(args) -> int:
    if args.model is None:
        raise UsageError("detect needs --model")
    if (args.export_scores or args.export_spots) and not args.out:
        raise UsageError("--export-scores/--export-spots need --out")
    model = load_model(args.model)
    if args.out and (args.export_scores or args.export_spots):
        os.makedirs(args.out, exist_ok=True)
    dets = pipeline.parallel_map(partial(_detect_path, model=model), args.images, args.jobs)
    for path, det in zip(args.images, dets):
        label = "stego" if det.label else "cover"
        print("\t".join([path, label] + [repr(float(s)) for s in det.scores]))
        stem = os.path.splitext(os.path.basename(path))[0]
        if args.export_scores:
            with open(os.path.join(args.out, stem + ".scores"), "wb") as fh:
                fh.write(score_plane_bytes(det.score_map.scores))
            write_pgm(score_heatmap(det.score_map.scores), os.path.join(args.out, stem + ".heat.pgm"))
        if args.export_spots:
            det.spots.write_csv(os.path.join(args.out, stem + ".spots.csv"))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.model is None:
        raise UsageError("eval needs --model")
    model = load_model(args.model)
    cfg = _config(args)
    full, parts = _split(cfg, args.manifest)
    chosen = {"all": full, "train": parts[0], "val": parts[1], "test": parts[2]}[args.split]
    pairs = pipeline.load_pairs(chosen, model.resize)
    if not pairs:
        raise ValueError(f"the {args.split} split is empty")
    report = pipeline.evaluate_pairs(model, pairs, args.jobs)
    print(report.key_values())
    print(report.text(), file=sys.stderr)
    return EXIT_OK


def cmd_budget(args) -> int:
    if args.model:
        shape = budget.ModelShape.from_model(load_model(args.model))
    else:
        shape = budget.reference_shape()
    rep = budget.audit(shape, args.convention)
    print(rep.markdown() if args.format == "markdown" else rep.key_values())
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="greensteg", description="Patch-wise steganalysis with boosted Saab features")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key=value run configuration file")
        if seed:
            sp.add_argument("--seed", type=int)

    def jobs(sp):
        sp.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="worker processes for per-image work; output order is unchanged")

    e = sub.add_parser("embed", help="generate cover/stego pairs with change maps")
    common(e)
    e.add_argument("--scheme", choices=["hill", "suniward"])
    e.add_argument("--payload", type=float)
    e.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic covers")
    e.add_argument("--size", type=int, default=64, help="synthetic cover side")
    e.add_argument("--covers", metavar="DIR", help="directory of .pgm covers")
    e.add_argument("--out", metavar="DIR")
    jobs(e)
    e.set_defaults(func=cmd_embed)

    f = sub.add_parser("fit", help="train a detector on a manifest")
    common(f)
    f.add_argument("--scheme", choices=["hill", "suniward"])
    f.add_argument("manifest")
    f.add_argument("--model", metavar="FILE", help="output model file")
    f.add_argument("--out", metavar="DIR", help="write discriminant-test and M-curve CSVs here")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("detect", help="classify images")
    d.add_argument("--model", metavar="FILE")
    d.add_argument("images", nargs="+")
    d.add_argument("--out", metavar="DIR")
    d.add_argument("--export-scores", action="store_true")
    d.add_argument("--export-spots", action="store_true")
    jobs(d)
    d.set_defaults(func=cmd_detect)

    v = sub.add_parser("eval", help="detection error on a labeled manifest")
    common(v, seed=False)
    v.add_argument("--model", metavar="FILE")
    v.add_argument("manifest")
    v.add_argument("--split", choices=["all", "train", "val", "test"], default="all")
    jobs(v)
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("budget", help="parameter and FLOP audit")
    b.add_argument("--model", metavar="FILE", help="audit a fitted model instead of the reference configuration")
    b.add_argument("--convention", choices=["paper", "exact"], default="paper")
    b.add_argument("--format", choices=["kv", "markdown"], default="kv")
    b.set_defaults(func=cmd_budget)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="level=%(levelname)s logger=%(name)s %(message)s", force=True)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.TrainingError as exc:
        log.error("status=failed stage=%s reason=%r", exc.stage, str(exc))
        return EXIT_TRAIN
    except (ConfigError, ModelFormatError, PgmError, ValueError, OSError) as exc:
        log.error("status=failed reason=%r", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
