"""Command-line entry point: generate-data, train, eval, bench, ablate, visualize-pca."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import shutil
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .aux_encoder import pca_rgb
from .config import RunConfig, load_run_config
from .data import (REGIMES, DatasetError, PhantomSpec, Sample, assign_splits, generate, generate_one, load_dataset,
                   read_png, save_dataset, split)
from .metrics import aggregate, boundary, evaluate_pair
from .model import ABLATION_MODES, SegmentationModel, load_model
from .tensor import ConfigError, Tensor, no_grad
from .train import ablation_suite, evaluate, resolve_best, train

log = logging.getLogger("usadapt")

BENCH_WARMUP = 20
BENCH_MIN_ITERS = 100
BENCH_SIZE = 224
DIAGNOSTIC_FILES = ("nonfinite_batch.json",)


class CliError(Exception):
    pass


# ---- output staging --------------------------------------------------------------

@contextlib.contextmanager
def staged_output(out: Path):
    """Write into a sibling staging directory; publish on success, discard on failure.

    Diagnostic dumps written before a failure are still copied to ``out``.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = out.parent / f".{out.name}.partial"
    shutil.rmtree(stage, ignore_errors=True)
    stage.mkdir()
    try:
        yield stage
    except BaseException:
        kept = [stage / n for n in DIAGNOSTIC_FILES if (stage / n).is_file()]
        if kept:
            out.mkdir(parents=True, exist_ok=True)
            for p in kept:
                shutil.copy2(p, out / p.name)
        shutil.rmtree(stage, ignore_errors=True)
        raise
    out.mkdir(parents=True, exist_ok=True)
    for item in sorted(stage.iterdir()):
        target = out / item.name
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        item.rename(target)
    stage.rmdir()


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_png(path: Path, array: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(array)).save(path)


# ---- shared helpers --------------------------------------------------------------

def run_config_from(args) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    tcfg = cfg.train
    if getattr(args, "seed", None) is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if getattr(args, "mode", None) is not None:
        tcfg = replace(tcfg, ablation_mode=args.mode)
    cfg = replace(cfg, train=tcfg)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def load_samples(cfg: RunConfig, data_dir=None) -> tuple[list[Sample], int]:
    path = data_dir or cfg.data.path
    if path is not None:
        return load_dataset(path)
    spec = cfg.data.phantom
    samples = assign_splits(generate(spec), tuple(cfg.data.split_fractions), cfg.data.split_seed)
    return samples, spec.num_classes


def check_classes(cfg: RunConfig, num_classes: int) -> None:
    if cfg.model.decoder.num_classes != num_classes:
        raise ConfigError(f"model.decoder.num_classes={cfg.model.decoder.num_classes} but the dataset has "
                          f"{num_classes} classes")


def pick_split(samples: list[Sample], name: str) -> list[Sample]:
    chosen = samples if name == "all" else split(samples, name)
    if not chosen:
        raise DatasetError(f"no samples in split {name!r}")
    return chosen


def model_from(args, cfg: RunConfig) -> SegmentationModel:
    if getattr(args, "checkpoint", None):
        return load_model(resolve_best(args.checkpoint))
    return SegmentationModel(cfg.model, cfg.train.ablation_mode, cfg.train.seed, cfg.train.freeze_decoder)


# ---- commands --------------------------------------------------------------------

def cmd_generate_data(args) -> None:
    cfg = load_run_config(args.config)
    spec = cfg.data.phantom.to_dict()
    for key, val in (("regime", args.regime), ("count", args.count), ("seed", args.seed),
                     ("empty_fraction", args.empty_fraction)):
        if val is not None:
            spec[key] = val
    if args.size is not None:
        spec["H"] = spec["W"] = args.size
    spec = PhantomSpec(**spec)
    samples = assign_splits(generate(spec), tuple(cfg.data.split_fractions), cfg.data.split_seed)
    with staged_output(args.out) as stage:
        save_dataset(stage, samples, spec.num_classes)
    print(f"wrote {len(samples)} samples to {args.out}")


def cmd_train(args) -> None:
    cfg = run_config_from(args)
    samples, C = load_samples(cfg, args.data)
    check_classes(cfg, C)
    train_set = split(samples, "train") or samples
    val_set = split(samples, "val") or train_set
    model = SegmentationModel(cfg.model, cfg.train.ablation_mode, cfg.train.seed, cfg.train.freeze_decoder)
    out = Path(cfg.output_dir)
    with staged_output(out) as stage:
        (stage / "config.json").write_text(cfg.dumps())
        res = train(model, train_set, val_set, cfg.train, stage, max_steps=args.max_steps,
                    extra_config={"run": cfg.to_dict()})
    print(f"best val loss {res.best_val_loss:.6f} at {out / 'checkpoints' / res.best_checkpoint.name}")


def _metric_rows(ids, per_image, agg):
    rows = [{"id": "ALL", **agg.summary()}]
    rows += [{"id": i, **r.summary()} for i, r in zip(ids, per_image)]
    return rows


def _write_metrics(stage: Path, ids, per_image, agg) -> None:
    doc = {"aggregate": agg.to_dict(), "per_image": [{"id": i, **r.to_dict()} for i, r in zip(ids, per_image)]}
    write_json(stage / "metrics.json", doc)
    rows = _metric_rows(ids, per_image, agg)
    cols = list(rows[0])
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else str(r[c]))
                              for c in cols))
    (stage / "metrics.csv").write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> None:
    cfg = run_config_from(args)
    samples, C = load_samples(cfg, args.data)
    chosen = pick_split(samples, args.split)
    ids = [s.id for s in chosen]
    if args.predictions:
        preds = [read_png(Path(args.predictions) / f"{i}.png").astype(np.int64) for i in ids]
        for i, p, s in zip(ids, preds, chosen):
            if p.shape != s.label.shape:
                raise DatasetError(f"{i}: prediction shape {p.shape} != label shape {s.label.shape}")
        per_image = [evaluate_pair(p, s.label, C) for p, s in zip(preds, chosen)]
        agg = aggregate(per_image)
    else:
        if not args.checkpoint:
            raise CliError("eval requires --checkpoint (or --predictions)")
        model = load_model(resolve_best(args.checkpoint))
        if model.cfg.decoder.num_classes != C:
            raise ConfigError(f"checkpoint predicts {model.cfg.decoder.num_classes} classes, dataset has {C}")
        agg, per_image, preds = evaluate(model, chosen)
    with staged_output(args.out) as stage:
        _write_metrics(stage, ids, per_image, agg)
        (stage / "predictions").mkdir()
        for i, p in zip(ids, preds):
            write_png(stage / "predictions" / f"{i}.png", np.asarray(p, dtype=np.uint8))
    s = agg.summary()
    print(f"dsc {s['dsc']:.4f} iou {s['iou']:.4f} acc {s['acc']:.4f} hd95 {s['hd95']}")


def cmd_bench(args) -> None:
    if args.iters < BENCH_MIN_ITERS:
        raise ConfigError(f"--iters must be >= {BENCH_MIN_ITERS}")
    cfg = run_config_from(args)
    model = model_from(args, cfg)
    image = generate_one(PhantomSpec(seed=cfg.train.seed, count=1, H=BENCH_SIZE, W=BENCH_SIZE), 0).image
    x = Tensor(image[None, :, :, None])
    times = []
    with no_grad():
        for _ in range(BENCH_WARMUP):
            model(x)
        for _ in range(args.iters):
            t0 = time.perf_counter()
            model(x)
            times.append((time.perf_counter() - t0) * 1000.0)
    mean_ms = float(np.mean(times))
    doc = {
        "warmup_iters": BENCH_WARMUP, "timed_iters": len(times), "image_size": [BENCH_SIZE, BENCH_SIZE],
        "batch_size": 1, "mode": model.mode, "device_note": args.device_note or "",
        # wall-clock values live here so the rest of the file is reproducible
        "timing": {"mean_ms": mean_ms, "std_ms": float(np.std(times)), "fps": round(1000.0 / mean_ms, 3)},
    }
    with staged_output(args.out) as stage:
        write_json(stage / "bench.json", doc)
    print(f"{doc['timing']['mean_ms']:.2f} ms/image, {doc['timing']['fps']} fps")


def cmd_ablate(args) -> None:
    cfg = run_config_from(args)
    samples, C = load_samples(cfg, args.data)
    check_classes(cfg, C)
    train_set = split(samples, "train") or samples
    val_set = split(samples, "val") or train_set
    test_set = split(samples, "test") or val_set
    with staged_output(Path(cfg.output_dir)) as stage:
        (stage / "config.json").write_text(cfg.dumps())
        rows = ablation_suite(cfg.model, train_set, val_set, test_set, cfg.train, stage, max_steps=args.max_steps)
    for r in rows:
        print(f"{r['mode']:<22} dsc {r['dsc']:.4f} hd {r['hd']}")


def overlay_contour(rgb: np.ndarray, label: np.ndarray) -> np.ndarray:
    """Paint every class's 1-px boundary white onto an (H, W, 3) float image."""
    out = rgb.copy()
    for c in np.unique(label):
        if c == 0:
            continue
        out[boundary(label == c)] = 1.0
    return out


def cmd_visualize_pca(args) -> None:
    cfg = run_config_from(args)
    samples, _ = load_samples(cfg, args.data)
    chosen = pick_split(samples, args.split)[:args.count]
    model = model_from(args, cfg)
    images = np.stack([s.image for s in chosen])[..., None]
    with no_grad():
        feats = model.aux(Tensor(images))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = pca_rgb(feats)
    info = []
    with staged_output(args.out) as stage:
        for i, s in enumerate(chosen):
            H, W = s.label.shape
            gh, gw = res.rgb.shape[1:3]
            up = np.repeat(np.repeat(res.rgb[i], H // gh, axis=0), W // gw, axis=1)
            img = overlay_contour(up, s.label)
            write_png(stage / f"pca_{s.id}.png", np.round(img * 255.0).astype(np.uint8))
            info.append({"id": s.id, "explained": [float(v) for v in res.explained[i]],
                         "degenerate": [bool(v) for v in res.degenerate[i]]})
        write_json(stage / "pca.json", info)
    print(f"wrote {len(chosen)} PCA images to {args.out}")


# ---- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="usadapt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--seed", type=int, help="overrides train.seed")
        sp.add_argument("--out", required=out_required, help="output directory")
        return sp

    g = common(sub.add_parser("generate-data", help="write a synthetic phantom dataset"))
    g.add_argument("--regime", choices=sorted(REGIMES))
    g.add_argument("--count", type=int)
    g.add_argument("--size", type=int, help="image height and width")
    g.add_argument("--empty-fraction", type=float)
    g.set_defaults(func=cmd_generate_data)

    t = common(sub.add_parser("train", help="fine-tune and checkpoint on validation loss"), out_required=False)
    t.add_argument("--mode", choices=ABLATION_MODES)
    t.add_argument("--data", help="dataset directory (overrides data.path)")
    t.add_argument("--max-steps", type=int)
    t.set_defaults(func=cmd_train)

    e = common(sub.add_parser("eval", help="metrics and predicted label maps"))
    e.add_argument("--checkpoint", help="run directory or checkpoint directory")
    e.add_argument("--predictions", help="directory of <id>.png label maps to score instead of a model")
    e.add_argument("--data", help="dataset directory (overrides data.path)")
    e.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    e.set_defaults(func=cmd_eval)

    b = common(sub.add_parser("bench", help="single-image forward timing at 224x224"))
    b.add_argument("--checkpoint")
    b.add_argument("--mode", choices=ABLATION_MODES)
    b.add_argument("--iters", type=int, default=BENCH_MIN_ITERS)
    b.add_argument("--device-note", help="free text recorded in bench.json")
    b.set_defaults(func=cmd_bench)

    a = common(sub.add_parser("ablate", help="train and evaluate the five ablation variants"), out_required=False)
    a.add_argument("--data", help="dataset directory (overrides data.path)")
    a.add_argument("--max-steps", type=int)
    a.set_defaults(func=cmd_ablate)

    v = common(sub.add_parser("visualize-pca", help="auxiliary features as RGB with the label contour"))
    v.add_argument("--checkpoint")
    v.add_argument("--mode", choices=ABLATION_MODES)
    v.add_argument("--data", help="dataset directory (overrides data.path)")
    v.add_argument("--split", default="all", choices=["train", "val", "test", "all"])
    v.add_argument("--count", type=int, default=4)
    v.set_defaults(func=cmd_visualize_pca)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one machine-parsable line, no traceback
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
