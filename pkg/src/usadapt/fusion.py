"""Project auxiliary features onto the pyramid and merge them level by level."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import params as P
from .hiera import FeaturePyramid
from .params import Parameter
from .tensor import ConfigError, ShapeError, Tensor, bilinear_resize, concat, interleave, linear

FUSION_MODES = ("none", "concat", "interleave")


@dataclass
class FusionConfig:
    mode: str = "interleave"
    group: int = 1

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, got {self.mode!r}")
        if self.group < 1:
            raise ConfigError("interleave group size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class Fusion:
    def __init__(self, cfg: FusionConfig, d_dino: int, d_hiera: int, seed: int = 0, trainable: bool = True):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {
            "fusion.w_proj": P.normal(seed, "fusion.w_proj", (d_dino, d_hiera), 1.0 / np.sqrt(d_dino), trainable),
            "fusion.b_proj": P.zeros("fusion.b_proj", (d_hiera,), trainable),
        }

    def trainable_parameters(self) -> dict[str, Parameter]:
        if self.cfg.mode == "none":
            return {}
        return {k: p for k, p in self.params.items() if p.trainable}

    def __call__(self, pyramid: FeaturePyramid, aux: Tensor | None) -> FeaturePyramid:
        return fuse_pyramid(pyramid, aux, self)


def project_aux(f_aux: Tensor, w_proj: Tensor, b_proj: Tensor) -> Tensor:
    if f_aux.shape[-1] != w_proj.shape[0]:
        raise ShapeError(f"aux features have {f_aux.shape[-1]} channels, projection expects {w_proj.shape[0]}")
    return linear(f_aux, w_proj, b_proj)


def fuse_pyramid(pyramid: FeaturePyramid, aux: Tensor | None, fusion: Fusion) -> FeaturePyramid:
    mode = fusion.cfg.mode
    if mode == "none":
        return pyramid
    if aux is None:
        raise ConfigError(f"fusion mode {mode!r} needs auxiliary features")
    # projection commutes with bilinear resizing, so project once at the native grid
    proj = project_aux(aux, fusion.params["fusion.w_proj"], fusion.params["fusion.b_proj"])
    levels = []
    for lvl in pyramid.levels:
        aligned = bilinear_resize(proj, lvl.shape[1], lvl.shape[2])
        if mode == "interleave":
            levels.append(interleave(lvl, aligned, fusion.cfg.group))
        else:
            levels.append(concat([lvl, aligned], axis=-1))
    return FeaturePyramid(levels, list(pyramid.strides))


def interleave_permutation(d: int, group: int = 1) -> np.ndarray:
    """Indices p such that interleave(a, b)[..., i] == concat(a, b)[..., p[i]]."""
    idx = []
    for k in range(d // group):
        idx.extend(range(k * group, (k + 1) * group))
        idx.extend(range(d + k * group, d + (k + 1) * group))
    return np.array(idx)
