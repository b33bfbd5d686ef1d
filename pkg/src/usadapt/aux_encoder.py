"""Frozen ViT-style auxiliary encoder and PCA rendering of its dense features."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import params as P
from .hiera import hiera_block, init_block, normalize_image
from .params import Parameter
from .tensor import ConfigError, ShapeError, Tensor, add, conv2d, layer_norm


@dataclass
class AuxConfig:
    patch_size: int = 16
    depth: int = 2
    d_dino: int = 48
    heads: int = 2
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_dino % self.heads:
            raise ConfigError(f"d_dino={self.d_dino} not divisible by heads={self.heads}")
        if self.d_dino % 4:
            raise ConfigError(f"d_dino={self.d_dino} must be divisible by 4 (position code)")

    def to_dict(self) -> dict:
        return asdict(self)


class AuxEncoder:
    """Patch embed + transformer blocks without a class token. Never trainable."""

    def __init__(self, cfg: AuxConfig, seed: int = 0):
        self.cfg = cfg
        ps, d = cfg.patch_size, cfg.d_dino
        w: dict[str, Parameter] = {
            "aux.patch_embed.w": P.normal(seed, "aux.patch_embed.w", (ps, ps, 1, d), 1.0 / ps),
            "aux.patch_embed.b": P.zeros("aux.patch_embed.b", (d,)),
            "aux.norm.gamma": P.ones("aux.norm.gamma", (d,)),
            "aux.norm.beta": P.zeros("aux.norm.beta", (d,)),
        }
        for i in range(cfg.depth):
            w.update(init_block(seed, f"aux.b{i}", d, cfg.mlp_ratio))
        self.params = w

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {}

    def __call__(self, images: Tensor) -> Tensor:
        return encode_aux(images, self)


def encode_aux(images: Tensor, enc: AuxEncoder) -> Tensor:
    cfg, w = enc.cfg, enc.params
    if images.ndim != 4 or images.shape[-1] != 1:
        raise ShapeError(f"aux encoder expects (b, H, W, 1) images, got {images.shape}")
    H, W = images.shape[1:3]
    if H % cfg.patch_size or W % cfg.patch_size:
        raise ShapeError(f"image size {(H, W)} must be a multiple of patch_size={cfg.patch_size}")
    x = conv2d(normalize_image(images), w["aux.patch_embed.w"], w["aux.patch_embed.b"], stride=cfg.patch_size)
    x = add(x, Tensor(P.sincos_2d(x.shape[1], x.shape[2], x.shape[3])))
    for i in range(cfg.depth):
        x = hiera_block(x, w, f"aux.b{i}", cfg.heads)
    return layer_norm(x, w["aux.norm.gamma"], w["aux.norm.beta"])


@dataclass
class PCAResult:
    rgb: np.ndarray          # (b, h, w, 3) in [0, 1]
    components: np.ndarray   # (b, 3, d) unit principal directions
    explained: np.ndarray    # (b, 3) fraction of total variance
    degenerate: np.ndarray   # (b, 3) bool


def _orthogonalize(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for _ in range(2):
        for b in basis:
            v = v - (v @ b) * b
    return v


def _power_iteration(cov: np.ndarray, basis: list[np.ndarray], rng: np.random.Generator,
                     tol: float = 1e-8, min_iter: int = 100, max_iter: int = 10000):
    scale = max(np.abs(cov).max(), np.finfo(float).tiny)
    v = _orthogonalize(rng.normal(size=cov.shape[0]), basis)
    v /= np.linalg.norm(v)
    for it in range(max_iter):
        nxt = _orthogonalize(cov @ v, basis)
        norm = np.linalg.norm(nxt)
        if norm <= 1e-12 * scale:
            # remaining spectrum is numerically zero
            return v, 0.0
        nxt /= norm
        delta = np.linalg.norm(nxt - v)
        v = nxt
        if it + 1 >= min_iter and delta < tol:
            break
    return v, float(v @ cov @ v)


def principal_components(x: np.ndarray, k: int = 3, seed: int = 0):
    """Top-k directions of an (n, d) sample matrix by power iteration with deflation.

    Returns (components (k, d), eigenvalues (k,), total variance).
    """
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(x.shape[0] - 1, 1)
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    comps, vals = [], []
    for _ in range(k):
        v, lam = _power_iteration(cov, comps, rng)
        # sign convention: largest-magnitude loading positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        vals.append(max(lam, 0.0))
    return np.array(comps), np.array(vals), total


def pca_rgb(features, rel_tol: float = 1e-10) -> PCAResult:
    """Map (b, h, w, d) features to RGB via their first three principal components, per image."""
    f = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
    if f.ndim != 4:
        raise ShapeError(f"pca_rgb expects (b, h, w, d), got {f.shape}")
    b, h, w, d = f.shape
    if d < 3 or h * w < 3:
        raise ShapeError(f"pca_rgb needs d >= 3 and h*w >= 3, got d={d}, h*w={h * w}")
    rgb = np.full((b, h, w, 3), 0.5)
    comps = np.zeros((b, 3, d))
    explained = np.zeros((b, 3))
    degenerate = np.zeros((b, 3), dtype=bool)
    for i in range(b):
        x = f[i].reshape(-1, d)
        vecs, vals, total = principal_components(x, 3)
        comps[i] = vecs
        proj = (x - x.mean(axis=0)) @ vecs.T
        for c in range(3):
            if total <= 0.0 or vals[c] <= rel_tol * total:
                degenerate[i, c] = True
                continue
            explained[i, c] = vals[c] / total
            lo, hi = proj[:, c].min(), proj[:, c].max()
            if hi - lo > 0:
                rgb[i, ..., c] = ((proj[:, c] - lo) / (hi - lo)).reshape(h, w)
    if degenerate.any():
        warnings.warn("pca_rgb: zero-variance principal component(s) rendered as 0.5 gray", RuntimeWarning)
    return PCAResult(rgb, comps, explained, degenerate)
