"""Dice + cross-entropy loss and segmentation / detection metrics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .tensor import Tensor, log_softmax, mul, softmax, sub, sum_

DICE_SMOOTH = 1e-5


def one_hot(target: np.ndarray, num_classes: int) -> np.ndarray:
    target = np.asarray(target)
    if target.min() < 0 or target.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes}), found range [{target.min()}, {target.max()}]")
    return np.eye(num_classes)[target]


def dice_ce_loss(logits: Tensor, target: np.ndarray, lambda_dice: float = 1.0,
                 lambda_ce: float = 1.0, smooth: float = DICE_SMOOTH) -> Tensor:
    """lambda_dice * (1 - mean soft Dice) + lambda_ce * mean pixel cross-entropy.

    Soft Dice is computed per sample and per class (background included) over the
    spatial axes, then averaged.
    """
    b, h, w, c = logits.shape
    if np.asarray(target).shape != (b, h, w):
        raise ValueError(f"target shape {np.asarray(target).shape} does not match logits {logits.shape[:3]}")
    onehot = Tensor(one_hot(target, c))
    probs = softmax(logits, axis=-1)
    inter = sum_(mul(probs, onehot), axis=(1, 2))
    denom = sum_(probs, axis=(1, 2)) + Tensor(onehot.data.sum(axis=(1, 2)))
    dice = (mul(inter, 2.0) + smooth) / (denom + smooth)
    dice_term = sub(1.0, dice.mean())
    ce = mul(sum_(mul(log_softmax(logits, axis=-1), onehot)), -1.0 / (b * h * w))
    return mul(dice_term, lambda_dice) + mul(ce, lambda_ce)


# ---- overlap -------------------------------------------------------------------

def overlap_metrics(pred: np.ndarray, gt: np.ndarray, num_classes: int):
    """Per-class (c >= 1) Dice and IoU, plus pixel accuracy over all classes.

    Both-empty classes score 1.0.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    dsc, iou = [], []
    for c in range(1, num_classes):
        p, g = pred == c, gt == c
        inter = int(np.count_nonzero(p & g))
        total = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
        union = total - inter
        if total == 0:
            dsc.append(1.0)
            iou.append(1.0)
        else:
            dsc.append(2.0 * inter / total)
            iou.append(inter / union)
    acc = float(np.count_nonzero(pred == gt)) / pred.size
    return dsc, iou, acc


# ---- surface distances -----------------------------------------------------------

def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background or outside the image."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def _directed(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # EDT of the complement of dst gives each pixel's distance to the nearest dst pixel
    dist = ndimage.distance_transform_edt(~dst)
    return dist[src]


@dataclass
class SurfaceDistances:
    hd: float = 0.0
    hd95: float = 0.0
    asd: float = 0.0
    valid: bool = False


def surface_distances(pred: np.ndarray, gt: np.ndarray) -> SurfaceDistances:
    """Symmetric boundary-to-boundary Euclidean distances (pixels); invalid if either mask is empty."""
    p, g = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if not p.any() or not g.any():
        return SurfaceDistances()
    bp, bg = boundary(p), boundary(g)
    d = np.concatenate([_directed(bp, bg), _directed(bg, bp)])
    return SurfaceDistances(float(d.max()), float(np.percentile(d, 95)), float(d.mean()), True)


# ---- detection -------------------------------------------------------------------

def detect_classify(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.25) -> str:
    p, g = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    has_p, has_g = p.any(), g.any()
    if has_g:
        if not has_p:
            return "FN"
        inter = np.count_nonzero(p & g)
        union = np.count_nonzero(p | g)
        return "TP" if inter / union > threshold else "FN"
    return "FP" if has_p else "TN"


@dataclass
class DetectionCounts:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    def add(self, outcome: str) -> None:
        setattr(self, outcome.lower(), getattr(self, outcome.lower()) + 1)

    def __iadd__(self, other: DetectionCounts):
        self.tp += other.tp
        self.fn += other.fn
        self.tn += other.tn
        self.fp += other.fp
        return self

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    # undefined ratios (zero denominator) are reported as 0.0
    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0

    @property
    def f1(self) -> float:
        pr, rc = self.precision, self.recall
        return 2 * pr * rc / (pr + rc) if pr + rc else 0.0


# ---- report --------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-class (foreground classes 1..C-1) overlap and distance metrics."""
    dsc: list[float]
    iou: list[float]
    acc: float
    hd: list[float]
    hd95: list[float]
    asd: list[float]
    distance_valid: list[bool]
    detection: DetectionCounts = field(default_factory=DetectionCounts)
    num_images: int = 1

    @property
    def mean_dsc(self) -> float:
        return float(np.mean(self.dsc))

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou))

    def _mean_valid(self, values) -> float:
        vals = [v for v, ok in zip(values, self.distance_valid) if ok]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_hd(self) -> float:
        return self._mean_valid(self.hd)

    @property
    def mean_hd95(self) -> float:
        return self._mean_valid(self.hd95)

    @property
    def mean_asd(self) -> float:
        return self._mean_valid(self.asd)

    def summary(self) -> dict:
        det = self.detection
        return {
            "dsc": self.mean_dsc, "iou": self.mean_iou, "acc": self.acc,
            "hd": _json_float(self.mean_hd), "hd95": _json_float(self.mean_hd95), "asd": _json_float(self.mean_asd),
            "tp": det.tp, "fn": det.fn, "tn": det.tn, "fp": det.fp,
            "precision": det.precision, "recall": det.recall,
            "specificity": det.specificity, "f1": det.f1,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hd"] = [_json_float(v) for v in self.hd]
        d["hd95"] = [_json_float(v) for v in self.hd95]
        d["asd"] = [_json_float(v) for v in self.asd]
        d["summary"] = self.summary()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        row = self.summary()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return buf.getvalue()


def _json_float(v: float):
    return None if v is None or not np.isfinite(v) else float(v)


def evaluate_pair(pred: np.ndarray, gt: np.ndarray, num_classes: int, threshold: float = 0.25) -> MetricReport:
    dsc, iou, acc = overlap_metrics(pred, gt, num_classes)
    hd, hd95, asd, valid = [], [], [], []
    det = DetectionCounts()
    for c in range(1, num_classes):
        sd = surface_distances(pred == c, gt == c)
        hd.append(sd.hd if sd.valid else float("nan"))
        hd95.append(sd.hd95 if sd.valid else float("nan"))
        asd.append(sd.asd if sd.valid else float("nan"))
        valid.append(sd.valid)
        det.add(detect_classify(pred == c, gt == c, threshold))
    return MetricReport(dsc, iou, acc, hd, hd95, asd, valid, det, 1)


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Average per-class metrics over images; distances only over valid entries; counts summed."""
    if not reports:
        raise ValueError("no reports to aggregate")
    n_cls = len(reports[0].dsc)
    det = DetectionCounts()
    for r in reports:
        det += r.detection

    def mean_valid(attr, c):
        vals = [getattr(r, attr)[c] for r in reports if r.distance_valid[c]]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricReport(
        dsc=[float(np.mean([r.dsc[c] for r in reports])) for c in range(n_cls)],
        iou=[float(np.mean([r.iou[c] for r in reports])) for c in range(n_cls)],
        acc=float(np.mean([r.acc for r in reports])),
        hd=[mean_valid("hd", c) for c in range(n_cls)],
        hd95=[mean_valid("hd95", c) for c in range(n_cls)],
        asd=[mean_valid("asd", c) for c in range(n_cls)],
        distance_valid=[any(r.distance_valid[c] for r in reports) for c in range(n_cls)],
        detection=det,
        num_images=sum(r.num_images for r in reports),
    )
