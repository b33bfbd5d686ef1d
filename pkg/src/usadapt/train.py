"""Adam with warmup/cosine schedule, adapter-only fine-tuning and best-checkpoint selection."""
from __future__ import annotations

import csv
import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import AugmentConfig, Sample, augment, batch_arrays
from .decoder import predict
from .metrics import MetricReport, aggregate, dice_ce_loss, evaluate_pair
from .model import ABLATION_MODES, ModelConfig, SegmentationModel
from .params import Parameter, save_checkpoint
from .tensor import ConfigError, NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    peak_lr: float = 1e-4
    warmup_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ablation_mode: str = "E_interleave"
    augment: bool = True
    freeze_decoder: bool = False

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if self.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(f"ablation_mode must be one of {ABLATION_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    return int(round(warmup_fraction * total_steps))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to peak_lr, then cosine decay to 0 at total_steps."""
    W = warmup_steps(total_steps, cfg.warmup_fraction)
    if step < W:
        return cfg.peak_lr * step / W
    if total_steps == W:
        return cfg.peak_lr
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * (step - W) / (total_steps - W)))


class Adam:
    """Moments are kept only for the parameters handed in (the trainable set)."""

    def __init__(self, params: dict[str, Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - update).astype(np.float32)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_val_loss: float = math.inf
    best_checkpoint: Path | None = None
    total_steps: int = 0


def dataset_loss(model: SegmentationModel, samples: list[Sample], batch_size: int) -> float:
    """Sample-weighted mean loss without gradient tracking."""
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            images, labels = batch_arrays(chunk)
            total += dice_ce_loss(model(images), labels).item() * len(chunk)
    return total / len(samples)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_history(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            writer.writerow([row["epoch"], _fmt(row["train_loss"]), _fmt(row["val_loss"]), _fmt(row["lr"])])


def train(model: SegmentationModel, train_set: list[Sample], val_set: list[Sample] | None,
          cfg: TrainConfig, out_dir=None, max_steps: int | None = None,
          extra_config: dict | None = None) -> TrainResult:
    """Train the model's trainable set in place; checkpoint on every validation improvement.

    ``max_steps`` truncates the run (the schedule still spans the full epoch count).
    """
    if not train_set:
        raise ValueError("empty training set")
    val_set = val_set or train_set
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    trainable = model.trainable_parameters()
    opt = Adam(trainable, cfg.beta1, cfg.beta2, cfg.eps)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    result = TrainResult(total_steps=total)
    run_config = {**model.run_config(), "train": cfg.to_dict(), **(extra_config or {})}
    aug_cfg = AugmentConfig()
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        batch_losses = []
        lr = 0.0
        for start in range(0, len(order), cfg.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            idx = order[start:start + cfg.batch_size]
            chunk = [train_set[i] for i in idx]
            if cfg.augment:
                chunk = [augment(s, np.random.default_rng([cfg.seed, epoch, int(i)]), aug_cfg)
                         for s, i in zip(chunk, idx)]
            images, labels = batch_arrays(chunk)
            try:
                loss = dice_ce_loss(model(Tensor(images)), labels)
            except NonFiniteError as exc:
                _dump_nonfinite(out, epoch, step, chunk)
                raise TrainingError(f"non-finite value at step {step} (batch ids {[s.id for s in chunk]}): {exc}")
            if not np.isfinite(loss.item()):
                _dump_nonfinite(out, epoch, step, chunk)
                raise TrainingError(f"non-finite loss at step {step} (batch ids {[s.id for s in chunk]})")
            if trainable:
                loss.backward()
            lr = lr_at(step, total, cfg)
            opt.step(lr)
            opt.zero_grad()
            batch_losses.append(loss.item())
            result.step_losses.append(loss.item())
            step += 1
        if not batch_losses:
            break
        val_loss = dataset_loss(model, val_set, cfg.batch_size)
        row = {"epoch": epoch, "train_loss": float(np.mean(batch_losses)), "val_loss": val_loss, "lr": lr}
        result.history.append(row)
        log.info("epoch %d train %.5f val %.5f lr %.3g", epoch, row["train_loss"], val_loss, lr)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            if out is not None:
                ckpt = out / "checkpoints" / str(step)
                save_checkpoint(ckpt, model.params, run_config)
                if result.best_checkpoint is not None and result.best_checkpoint != ckpt:
                    shutil.rmtree(result.best_checkpoint, ignore_errors=True)
                result.best_checkpoint = ckpt
                (out / "best").write_text(f"checkpoints/{step}\n")
        if out is not None:
            write_history(out / "history.csv", result.history)
    return result


def _dump_nonfinite(out: Path | None, epoch: int, step: int, chunk: list[Sample]) -> None:
    if out is None:
        return
    (out / "nonfinite_batch.json").write_text(json.dumps(
        {"epoch": epoch, "step": step, "batch_ids": [s.id for s in chunk]}, indent=2) + "\n")


def resolve_best(run_dir) -> Path:
    run_dir = Path(run_dir)
    marker = run_dir / "best"
    if marker.is_file():
        return run_dir / marker.read_text().strip()
    return run_dir


# ---- evaluation --------------------------------------------------------------

def evaluate(model: SegmentationModel, samples: list[Sample], batch_size: int = 4,
             threshold: float = 0.25) -> tuple[MetricReport, list[MetricReport], list[np.ndarray]]:
    images, labels = batch_arrays(samples)
    preds = list(predict(model.predict_logits(images, batch_size)))
    C = model.cfg.decoder.num_classes
    per_image = [evaluate_pair(p, g, C, threshold) for p, g in zip(preds, labels)]
    return aggregate(per_image), per_image, preds


# ---- ablation ------------------------------------------------------------------

ABLATION_COLUMNS = ["mode", "dsc", "hd", "hd95", "trainable_params", "pyramid_levels"]


def ablation_suite(model_cfg: ModelConfig, train_set: list[Sample], val_set: list[Sample],
                   eval_set: list[Sample], base: TrainConfig, out_dir=None,
                   max_steps: int | None = None) -> list[dict]:
    """Train and evaluate the five ablation variants with identical seeds and data."""
    rows = []
    for mode in ABLATION_MODES:
        cfg = TrainConfig(**{**base.to_dict(), "ablation_mode": mode})
        model = SegmentationModel(model_cfg, mode, cfg.seed)
        sub = Path(out_dir) / mode if out_dir is not None else None
        train(model, train_set, val_set, cfg, sub, max_steps=max_steps)
        report, _, _ = evaluate(model, eval_set, cfg.batch_size)
        rows.append({"mode": mode, "dsc": report.mean_dsc, "hd": report.mean_hd, "hd95": report.mean_hd95,
                     "trainable_params": model.num_trainable(), "pyramid_levels": model.decoder.num_levels})
    if out_dir is not None:
        write_ablation(Path(out_dir) / "ablation.csv", rows)
    return rows


def write_ablation(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
