"""Frozen hierarchical image encoder with bottleneck adapters in every block."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import params as P
from .params import Parameter
from .tensor import (ConfigError, ShapeError, Tensor, add, attention, conv2d, gelu,
                     layer_norm, linear, max_pool2d, reshape)

ADAPTER_POSITIONS = ("post_attention", "post_mlp")


@dataclass
class HieraConfig:
    num_stages: int = 3
    blocks_per_stage: list[int] = field(default_factory=lambda: [1, 1, 1])
    stage_dims: list[int] = field(default_factory=lambda: [32, 64, 128])
    heads_per_stage: list[int] = field(default_factory=lambda: [1, 2, 4])
    patch_stride: int = 4
    d_hiera: int = 64
    adapter_enabled: bool = True
    adapter_position: str = "post_attention"
    mlp_ratio: int = 4

    def __post_init__(self):
        n = self.num_stages
        if not (len(self.stage_dims) == len(self.blocks_per_stage) == len(self.heads_per_stage) == n):
            raise ConfigError(
                f"stage_dims, blocks_per_stage and heads_per_stage must all have length num_stages={n}")
        if self.adapter_position not in ADAPTER_POSITIONS:
            raise ConfigError(f"adapter_position must be one of {ADAPTER_POSITIONS}")
        for d, h in zip(self.stage_dims, self.heads_per_stage):
            if d % 4:
                raise ConfigError(f"stage dim {d} must be divisible by 4 (adapter rank d/4)")
            if d % h:
                raise ConfigError(f"stage dim {d} not divisible by {h} heads")

    @property
    def required_multiple(self) -> int:
        return self.patch_stride * 2 ** (self.num_stages - 1)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdapterWeights:
    w_down: Tensor
    b_down: Tensor
    w_up: Tensor
    b_up: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w_down, self.b_down, self.w_up, self.b_up]


@dataclass
class FeaturePyramid:
    """Multi-scale maps, finest first; ``strides[n]`` is level n's stride w.r.t. the image."""
    levels: list[Tensor]
    strides: list[int]

    def __len__(self):
        return len(self.levels)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [lvl.shape for lvl in self.levels]


def adapter_rank(d: int) -> int:
    if d % 4:
        raise ConfigError(f"adapter hidden dim {d} is not divisible by 4")
    return d // 4


def init_adapter(seed: int, prefix: str, d: int, trainable: bool = True) -> AdapterWeights:
    r = adapter_rank(d)
    return AdapterWeights(
        w_down=P.normal(seed, f"{prefix}.w_down", (d, r), 1.0 / np.sqrt(d), trainable),
        b_down=P.zeros(f"{prefix}.b_down", (r,), trainable),
        # zero up-projection: the adapter starts as the identity map
        w_up=P.zeros(f"{prefix}.w_up", (r, d), trainable),
        b_up=P.zeros(f"{prefix}.b_up", (d,), trainable),
    )


def adapter_forward(x: Tensor, w: AdapterWeights) -> Tensor:
    """GELU(x W_down + b_down) W_up + b_up + x at every spatial position."""
    d = x.shape[-1]
    r = adapter_rank(d)
    if w.w_down.shape != (d, r) or w.w_up.shape != (r, d):
        raise ShapeError(f"adapter weights {w.w_down.shape}/{w.w_up.shape} do not match d={d}, r={r}")
    hidden = gelu(linear(x, w.w_down, w.b_down))
    return add(linear(hidden, w.w_up, w.b_up), x)


def _linear_init(seed, name, d_in, d_out):
    return {f"{name}.w": P.normal(seed, f"{name}.w", (d_in, d_out), 1.0 / np.sqrt(d_in)),
            f"{name}.b": P.zeros(f"{name}.b", (d_out,))}


def init_block(seed: int, prefix: str, d: int, mlp_ratio: int) -> dict[str, Parameter]:
    w: dict[str, Parameter] = {}
    for norm in ("norm1", "norm2"):
        w[f"{prefix}.{norm}.gamma"] = P.ones(f"{prefix}.{norm}.gamma", (d,))
        w[f"{prefix}.{norm}.beta"] = P.zeros(f"{prefix}.{norm}.beta", (d,))
    for proj in ("q", "k", "v", "o"):
        w.update(_linear_init(seed, f"{prefix}.attn.{proj}", d, d))
    w.update(_linear_init(seed, f"{prefix}.mlp.fc1", d, mlp_ratio * d))
    w.update(_linear_init(seed, f"{prefix}.mlp.fc2", mlp_ratio * d, d))
    return w


def _attend(x: Tensor, heads: int, bw: dict, prefix: str) -> Tensor:
    b, h, w, d = x.shape
    tokens = reshape(x, (b, h * w, d))
    out = attention(tokens, heads,
                    bw[f"{prefix}.attn.q.w"], bw[f"{prefix}.attn.k.w"],
                    bw[f"{prefix}.attn.v.w"], bw[f"{prefix}.attn.o.w"],
                    bw[f"{prefix}.attn.q.b"], bw[f"{prefix}.attn.k.b"],
                    bw[f"{prefix}.attn.v.b"], bw[f"{prefix}.attn.o.b"])
    return reshape(out, (b, h, w, d))


def _mlp(x: Tensor, bw: dict, prefix: str) -> Tensor:
    hidden = gelu(linear(x, bw[f"{prefix}.mlp.fc1.w"], bw[f"{prefix}.mlp.fc1.b"]))
    return linear(hidden, bw[f"{prefix}.mlp.fc2.w"], bw[f"{prefix}.mlp.fc2.b"])


def hiera_block(x: Tensor, bw: dict, prefix: str, heads: int,
                adapter: AdapterWeights | None = None,
                position: str = "post_attention") -> Tensor:
    """Pre-norm attention + MLP block; the adapter sits after the attention residual by default."""
    x1 = add(x, _attend(layer_norm(x, bw[f"{prefix}.norm1.gamma"], bw[f"{prefix}.norm1.beta"]), heads, bw, prefix))
    if adapter is not None and position == "post_attention":
        x1 = adapter_forward(x1, adapter)
    out = add(x1, _mlp(layer_norm(x1, bw[f"{prefix}.norm2.gamma"], bw[f"{prefix}.norm2.beta"]), bw, prefix))
    if adapter is not None and position == "post_mlp":
        out = adapter_forward(out, adapter)
    return out


class HieraEncoder:
    """Patch embed -> stages of blocks joined by 2x2 max-pool + linear widening -> per-stage neck."""

    def __init__(self, cfg: HieraConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        ps, d0 = cfg.patch_stride, cfg.stage_dims[0]
        w: dict[str, Parameter] = {
            "hiera.patch_embed.w": P.normal(seed, "hiera.patch_embed.w", (ps, ps, 1, d0), 1.0 / ps),
            "hiera.patch_embed.b": P.zeros("hiera.patch_embed.b", (d0,)),
        }
        self.adapters: dict[str, AdapterWeights] = {}
        for s, (d, nb) in enumerate(zip(cfg.stage_dims, cfg.blocks_per_stage)):
            if s > 0:
                w.update(_linear_init(seed, f"hiera.s{s}.expand", cfg.stage_dims[s - 1], d))
            for i in range(nb):
                w.update(init_block(seed, f"hiera.s{s}.b{i}", d, cfg.mlp_ratio))
                if cfg.adapter_enabled:
                    self.adapters[f"s{s}.b{i}"] = init_adapter(seed, f"adapter.hiera.s{s}.b{i}", d)
            w.update(_linear_init(seed, f"hiera.neck{s}", d, cfg.d_hiera))
        self.backbone = w

    @property
    def params(self) -> dict[str, Parameter]:
        out = dict(self.backbone)
        for a in self.adapters.values():
            for t in a.tensors():
                out[t.name] = t
        return out

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {t.name: t for a in self.adapters.values() for t in a.tensors() if t.trainable}

    def __call__(self, images: Tensor, use_adapters: bool = True) -> FeaturePyramid:
        return encode(images, self, use_adapters)


def encode(images: Tensor, enc: HieraEncoder, use_adapters: bool = True) -> FeaturePyramid:
    cfg, w = enc.cfg, enc.backbone
    if images.ndim != 4 or images.shape[-1] != 1:
        raise ShapeError(f"encoder expects (b, H, W, 1) images, got {images.shape}")
    m = cfg.required_multiple
    H, W = images.shape[1:3]
    if H % m or W % m:
        raise ShapeError(f"image size {(H, W)} must be a multiple of {m} (patch_stride * 2^(N-1))")
    x = conv2d(normalize_image(images), w["hiera.patch_embed.w"], w["hiera.patch_embed.b"], stride=cfg.patch_stride)
    x = add(x, Tensor(P.sincos_2d(x.shape[1], x.shape[2], x.shape[3])))
    levels, strides = [], []
    for s, (nb, heads) in enumerate(zip(cfg.blocks_per_stage, cfg.heads_per_stage)):
        if s > 0:
            x = linear(max_pool2d(x), w[f"hiera.s{s}.expand.w"], w[f"hiera.s{s}.expand.b"])
        for i in range(nb):
            adapter = enc.adapters.get(f"s{s}.b{i}") if use_adapters else None
            x = hiera_block(x, w, f"hiera.s{s}.b{i}", heads, adapter, cfg.adapter_position)
        levels.append(linear(x, w[f"hiera.neck{s}.w"], w[f"hiera.neck{s}.b"]))
        strides.append(cfg.patch_stride * 2 ** s)
    return FeaturePyramid(levels, strides)


IMAGE_MEAN, IMAGE_STD = 0.5, 0.25


def normalize_image(images: Tensor) -> Tensor:
    """Shift [0, 1] intensities to roughly zero mean, unit scale."""
    return (images - IMAGE_MEAN) * (1.0 / IMAGE_STD)
