"""Coarse-to-fine decoder and the upsampling projection head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import params as P
from .hiera import FeaturePyramid
from .params import Parameter
from .tensor import ConfigError, Tensor, concat, conv2d, conv_transpose2d, gelu, layer_norm


@dataclass
class DecoderConfig:
    channels: list[int] = field(default_factory=lambda: [256, 128, 64])
    num_classes: int = 3
    head_channels: list[int] = field(default_factory=lambda: [64, 32])
    head_activation: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.channels:
            raise ConfigError("decoder needs at least one channel entry")

    def to_dict(self) -> dict:
        return asdict(self)


def _conv(seed, name, k, c_in, c_out):
    return {f"{name}.w": P.normal(seed, f"{name}.w", (k, k, c_in, c_out), np.sqrt(2.0 / (k * k * c_in)), True),
            f"{name}.b": P.zeros(f"{name}.b", (c_out,), True)}


def _up(seed, name, c_in, c_out):
    return {f"{name}.w": P.normal(seed, f"{name}.w", (2, 2, c_in, c_out), np.sqrt(1.0 / c_in), True),
            f"{name}.b": P.zeros(f"{name}.b", (c_out,), True)}


def _norm(name, c):
    return {f"{name}.gamma": P.ones(f"{name}.gamma", (c,), True),
            f"{name}.beta": P.zeros(f"{name}.beta", (c,), True)}


class Decoder:
    """Hierarchical decoder; with ``hierarchical=False`` only the head runs, on the finest level."""

    def __init__(self, cfg: DecoderConfig, in_channels: int, seed: int = 0, hierarchical: bool = True):
        self.cfg = cfg
        self.in_channels = in_channels
        self.hierarchical = hierarchical
        w: dict[str, Parameter] = {}
        if hierarchical:
            ch = cfg.channels
            for i, c in enumerate(ch):
                c_in = in_channels if i == 0 else ch[i] + in_channels
                if i > 0:
                    w.update(_up(seed, f"decoder.up{i}", ch[i - 1], ch[i]))
                w.update(_conv(seed, f"decoder.block{i}.conv1", 3, c_in, c))
                w.update(_norm(f"decoder.block{i}.norm1", c))
                w.update(_conv(seed, f"decoder.block{i}.conv2", 3, c, c))
                w.update(_norm(f"decoder.block{i}.norm2", c))
            head_in = ch[-1]
        else:
            head_in = in_channels
        c_prev = head_in
        for j, c in enumerate(cfg.head_channels):
            w.update(_up(seed, f"decoder.head.up{j}", c_prev, c))
            w.update(_conv(seed, f"decoder.head.conv{j}", 3, c, c))
            c_prev = c
        w.update(_conv(seed, "decoder.head.out", 1, c_prev, cfg.num_classes))
        self.params = w

    @property
    def num_levels(self) -> int:
        return len(self.cfg.channels) if self.hierarchical else 1

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {k: p for k, p in self.params.items() if p.trainable}

    def __call__(self, pyramid: FeaturePyramid) -> Tensor:
        return decode(pyramid, self)


def conv_block(x: Tensor, w: dict, prefix: str) -> Tensor:
    """Two 3x3 same-padded convs, each followed by channel layer-norm and GELU."""
    for j in (1, 2):
        x = conv2d(x, w[f"{prefix}.conv{j}.w"], w[f"{prefix}.conv{j}.b"], stride=1, pad=1)
        x = gelu(layer_norm(x, w[f"{prefix}.norm{j}.gamma"], w[f"{prefix}.norm{j}.beta"]))
    return x


def projection_head(x: Tensor, dec: Decoder) -> Tensor:
    w = dec.params
    for j in range(len(dec.cfg.head_channels)):
        x = conv_transpose2d(x, w[f"decoder.head.up{j}.w"], w[f"decoder.head.up{j}.b"], stride=2)
        x = conv2d(x, w[f"decoder.head.conv{j}.w"], w[f"decoder.head.conv{j}.b"], stride=1, pad=1)
        if dec.cfg.head_activation:
            x = gelu(x)
    return conv2d(x, w["decoder.head.out.w"], w["decoder.head.out.b"])


def decode(pyramid: FeaturePyramid, dec: Decoder, trace: list | None = None) -> Tensor:
    """Fused pyramid (finest first) -> per-pixel logits (b, H, W, C).

    ``trace`` (if given) collects the feature map after each fuse step.
    """
    w = dec.params
    levels = pyramid.levels
    if not dec.hierarchical:
        return projection_head(levels[0], dec)
    if len(levels) != len(dec.cfg.channels):
        raise ConfigError(f"pyramid has {len(levels)} levels but decoder has {len(dec.cfg.channels)} channel entries")
    widths = {lvl.shape[-1] for lvl in levels}
    if widths != {dec.in_channels}:
        raise ConfigError(f"pyramid channel widths {sorted(widths)} != decoder input width {dec.in_channels}")
    x = conv_block(levels[-1], w, "decoder.block0")
    if trace is not None:
        trace.append(x)
    for i in range(1, len(levels)):
        up = conv_transpose2d(x, w[f"decoder.up{i}.w"], w[f"decoder.up{i}.b"], stride=2)
        x = conv_block(concat([up, levels[-1 - i]], axis=-1), w, f"decoder.block{i}")
        if trace is not None:
            trace.append(x)
    return projection_head(x, dec)


def predict(logits) -> np.ndarray:
    """Per-pixel argmax over classes; ties go to the lowest class index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.shape[-1] < 2:
        raise ConfigError("predict needs at least two classes")
    return data.argmax(axis=-1).astype(np.int64)
