"""Synthetic speckle phantoms, augmentations and the on-disk dataset format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

REGIMES = {"cardiac": 3, "thyroid": 2}
BACKGROUND_LEVEL = 0.25
STRUCTURE_LEVELS = (0.55, 0.75)
SPLITS = ("train", "val", "test")


@dataclass
class Sample:
    image: np.ndarray   # (H, W) float in [0, 1]
    label: np.ndarray   # (H, W) uint8 class indices
    id: str
    split: str = "train"


@dataclass
class PhantomSpec:
    seed: int = 0
    count: int = 16
    H: int = 224
    W: int = 224
    regime: str = "cardiac"
    empty_fraction: float = 0.2

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {sorted(REGIMES)}, got {self.regime!r}")
        if not 0.0 <= self.empty_fraction <= 1.0:
            raise ValueError("empty_fraction must lie in [0, 1]")

    @property
    def num_classes(self) -> int:
        return REGIMES[self.regime]

    def to_dict(self) -> dict:
        return asdict(self)


def _ellipse(rng: np.random.Generator, H: int, W: int):
    scale = min(H, W) / 224.0
    cy = rng.uniform(0.2 * H, 0.8 * H)
    cx = rng.uniform(0.2 * W, 0.8 * W)
    ay, ax = rng.uniform(15 * scale, 50 * scale, size=2)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / ax
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ay
    return u * u + v * v  # squared normalised radius; < 1 inside


def _render(rng: np.random.Generator, label: np.ndarray, radii: dict[int, np.ndarray]) -> np.ndarray:
    img = np.full(label.shape, BACKGROUND_LEVEL)
    for cls, rho2 in radii.items():
        inside = label == cls
        # bright wall, darker (anechoic-like) interior
        img[inside] = STRUCTURE_LEVELS[cls - 1] * (0.7 + 0.3 * rho2[inside])
    e = rng.exponential(1.0, size=(2,) + label.shape)
    speckle = (0.5 * (e[0] + e[1])) ** 2 / 1.5  # unit mean
    img = ndimage.uniform_filter(img * speckle, size=3, mode="nearest")
    return np.clip(img, 0.0, 1.0)


def generate_one(spec: PhantomSpec, index: int) -> Sample:
    rng = np.random.default_rng([spec.seed, index])
    H, W = spec.H, spec.W
    label = np.zeros((H, W), dtype=np.uint8)
    radii: dict[int, np.ndarray] = {}
    if spec.regime == "cardiac":
        while True:
            r1, r2 = _ellipse(rng, H, W), _ellipse(rng, H, W)
            label[:] = 0
            label[r1 < 1] = 1
            label[r2 < 1] = 2
            if (label == 1).any() and (label == 2).any():
                break
        radii = {1: r1, 2: r2}
    else:
        if rng.uniform() >= spec.empty_fraction:
            r1 = _ellipse(rng, H, W)
            label[r1 < 1] = 1
            radii = {1: r1}
    return Sample(_render(rng, label, radii).astype(np.float32), label, f"{spec.regime}_{index:05d}")


def generate(spec: PhantomSpec) -> list[Sample]:
    """Deterministic phantom set; sample i depends only on (seed, i)."""
    return [generate_one(spec, i) for i in range(spec.count)]


def assign_splits(samples: list[Sample], fractions=(0.7, 0.15, 0.15), seed: int = 0) -> list[Sample]:
    n = len(samples)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    order = np.random.default_rng(seed).permutation(n)
    for rank, i in enumerate(order):
        samples[i].split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return samples


# ---- augmentation ------------------------------------------------------------

@dataclass
class AugmentConfig:
    p: float = 0.5
    rotation_deg: float = 15.0
    scale: tuple[float, float] = (0.9, 1.1)
    gamma: tuple[float, float] = (0.8, 1.2)
    noise_sigma: float = 0.05
    smooth_sigma: tuple[float, float] = (0.5, 1.0)


AUGMENTATIONS = ("flip", "rotate", "scale", "gamma", "noise", "smooth")


def _affine(img: np.ndarray, angle_deg: float, scale: float, order: int) -> np.ndarray:
    H, W = img.shape
    t = np.deg2rad(angle_deg)
    # output -> input mapping for rotation by t and zoom by scale about the centre
    inv = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]]) / scale
    centre = np.array([(H - 1) / 2.0, (W - 1) / 2.0])
    offset = centre - inv @ centre
    return ndimage.affine_transform(img, inv, offset=offset, order=order, mode="constant", cval=0.0)


def augment(sample: Sample, rng: np.random.Generator, cfg: AugmentConfig | None = None,
            forced: dict | None = None) -> Sample:
    """Independently apply each transform with probability ``cfg.p``.

    ``forced`` maps transform names to fixed parameters (``True`` for flip); when
    given, exactly those transforms run and nothing is drawn from ``rng``.
    """
    cfg = cfg or AugmentConfig()
    if forced is None:
        chosen = {}
        if rng.uniform() < cfg.p:
            chosen["flip"] = True
        if rng.uniform() < cfg.p:
            chosen["rotate"] = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
        if rng.uniform() < cfg.p:
            chosen["scale"] = rng.uniform(*cfg.scale)
        if rng.uniform() < cfg.p:
            chosen["gamma"] = rng.uniform(*cfg.gamma)
        if rng.uniform() < cfg.p:
            chosen["noise"] = rng.uniform(0.0, cfg.noise_sigma)
        if rng.uniform() < cfg.p:
            chosen["smooth"] = rng.uniform(*cfg.smooth_sigma)
    else:
        unknown = set(forced) - set(AUGMENTATIONS)
        if unknown:
            raise ValueError(f"unknown augmentations: {sorted(unknown)}")
        chosen = dict(forced)

    img = sample.image.astype(np.float64)
    lab = sample.label
    if chosen.get("flip"):
        img, lab = img[:, ::-1], lab[:, ::-1]
    if "rotate" in chosen or "scale" in chosen:
        angle, zoom = chosen.get("rotate", 0.0), chosen.get("scale", 1.0)
        img = _affine(img, angle, zoom, order=1)
        lab = _affine(lab, angle, zoom, order=0)
    if "gamma" in chosen:
        img = np.clip(img, 0.0, 1.0) ** chosen["gamma"]
    if "noise" in chosen:
        img = img + rng.normal(0.0, chosen["noise"], size=img.shape) if chosen["noise"] > 0 else img
    if "smooth" in chosen:
        img = ndimage.gaussian_filter(img, chosen["smooth"])
    return Sample(np.clip(img, 0.0, 1.0).astype(np.float32), np.ascontiguousarray(lab, dtype=np.uint8),
                  sample.id, sample.split)


# ---- dataset IO --------------------------------------------------------------

def save_dataset(directory, samples: list[Sample], num_classes: int) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        img = np.round(np.clip(s.image, 0, 1) * 255.0).astype(np.uint8)
        Image.fromarray(img).save(directory / "images" / f"{s.id}.png")
        Image.fromarray(s.label.astype(np.uint8)).save(directory / "labels" / f"{s.id}.png")
        entries.append({"id": s.id, "image": f"images/{s.id}.png", "label": f"labels/{s.id}.png", "split": s.split})
    manifest = {"num_classes": num_classes, "samples": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


class DatasetError(ValueError):
    pass


def read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    return np.asarray(Image.open(path))


def load_dataset(directory, num_classes: int | None = None) -> tuple[list[Sample], int]:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.is_file():
        raise DatasetError(f"missing manifest: {mpath}")
    manifest = json.loads(mpath.read_text())
    C = num_classes or manifest["num_classes"]
    samples = []
    for e in manifest["samples"]:
        img = read_png(directory / e["image"])
        lab = read_png(directory / e["label"])
        if img.ndim != 2 or img.shape != lab.shape:
            raise DatasetError(f"{e['id']}: image {img.shape} and label {lab.shape} must be equal 2-D shapes")
        if lab.max() >= C:
            raise DatasetError(f"{e['id']}: label value {int(lab.max())} >= num_classes {C}")
        samples.append(Sample((img.astype(np.float32) / 255.0), lab.astype(np.uint8), e["id"], e.get("split", "train")))
    return samples, C


def split(samples: list[Sample], name: str) -> list[Sample]:
    return [s for s in samples if s.split == name]


def batch_arrays(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])[..., None]
    labels = np.stack([s.label for s in samples]).astype(np.int64)
    return images, labels
