"""Full segmentation network: adapted hierarchical encoder + auxiliary fusion + decoder."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .aux_encoder import AuxConfig, AuxEncoder
from .decoder import Decoder, DecoderConfig, decode
from .fusion import Fusion, FusionConfig
from .hiera import FeaturePyramid, HieraConfig, HieraEncoder
from .params import Parameter, assign, load_checkpoint
from .tensor import ConfigError, Tensor, no_grad

ABLATION_MODES = ("A_convdec_nofinetune", "B_hierdec", "C_adapter", "D_concat", "E_interleave")

# mode -> (adapters, fusion mode, hierarchical decoder)
_MODE_TABLE = {
    "A_convdec_nofinetune": (False, "none", False),
    "B_hierdec": (False, "none", True),
    "C_adapter": (True, "none", True),
    "D_concat": (True, "concat", True),
    "E_interleave": (True, "interleave", True),
}


def _from_dict(cls, data: dict | None):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class ModelConfig:
    hiera: HieraConfig = field(default_factory=HieraConfig)
    aux: AuxConfig = field(default_factory=AuxConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    @classmethod
    def from_dict(cls, data: dict | None) -> ModelConfig:
        data = dict(data or {})
        unknown = set(data) - {"hiera", "aux", "fusion", "decoder"}
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(_from_dict(HieraConfig, data.get("hiera")), _from_dict(AuxConfig, data.get("aux")),
                   _from_dict(FusionConfig, data.get("fusion")), _from_dict(DecoderConfig, data.get("decoder")))

    def to_dict(self) -> dict:
        return {"hiera": self.hiera.to_dict(), "aux": self.aux.to_dict(),
                "fusion": self.fusion.to_dict(), "decoder": self.decoder.to_dict()}


class SegmentationModel:
    """Builds the variant named by ``mode``; the config's adapter/fusion switches are overridden by it."""

    def __init__(self, cfg: ModelConfig, mode: str = "E_interleave", seed: int = 0,
                 freeze_decoder: bool = False):
        if mode not in _MODE_TABLE:
            raise ConfigError(f"mode must be one of {ABLATION_MODES}, got {mode!r}")
        use_adapters, fusion_mode, hierarchical = _MODE_TABLE[mode]
        self.mode = mode
        self.seed = seed
        self.freeze_decoder = freeze_decoder
        self.cfg = replace(cfg, hiera=replace(cfg.hiera, adapter_enabled=use_adapters),
                           fusion=replace(cfg.fusion, mode=fusion_mode))
        self.hiera = HieraEncoder(self.cfg.hiera, seed)
        self.aux = AuxEncoder(self.cfg.aux, seed)
        self.fusion = Fusion(self.cfg.fusion, self.cfg.aux.d_dino, self.cfg.hiera.d_hiera, seed,
                             trainable=fusion_mode != "none")
        width = self.cfg.hiera.d_hiera * (1 if fusion_mode == "none" else 2)
        self.decoder = Decoder(self.cfg.decoder, width, seed, hierarchical=hierarchical)
        if hierarchical and len(self.cfg.decoder.channels) != self.cfg.hiera.num_stages:
            raise ConfigError(f"decoder channels {self.cfg.decoder.channels} need one entry per "
                              f"encoder stage ({self.cfg.hiera.num_stages})")
        if freeze_decoder:
            for p in self.decoder.params.values():
                p.trainable = False

    @property
    def params(self) -> dict[str, Parameter]:
        out = {}
        out.update(self.hiera.params)
        out.update(self.aux.params)
        out.update(self.fusion.params)
        out.update(self.decoder.params)
        return out

    def trainable_parameters(self) -> dict[str, Parameter]:
        out = {}
        out.update(self.hiera.trainable_parameters())
        out.update(self.aux.trainable_parameters())
        out.update(self.fusion.trainable_parameters())
        out.update(self.decoder.trainable_parameters())
        return out

    def frozen_parameters(self) -> dict[str, Parameter]:
        trainable = self.trainable_parameters()
        return {k: p for k, p in self.params.items() if k not in trainable}

    def num_trainable(self) -> int:
        return int(sum(p.size for p in self.trainable_parameters().values()))

    def encoder_pyramid(self, images: Tensor) -> FeaturePyramid:
        return self.hiera(images)

    def fused_pyramid(self, images: Tensor) -> FeaturePyramid:
        pyramid = self.hiera(images)
        aux = self.aux(images) if self.cfg.fusion.mode != "none" else None
        fused = self.fusion(pyramid, aux)
        if not self.decoder.hierarchical:
            fused = FeaturePyramid(fused.levels[:1], fused.strides[:1])
        return fused

    def forward(self, images) -> Tensor:
        images = images if isinstance(images, Tensor) else Tensor(_as_nhwc(images))
        return decode(self.fused_pyramid(images), self.decoder)

    __call__ = forward

    def predict_logits(self, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
        images = _as_nhwc(images)
        outs = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                outs.append(self.forward(images[i:i + batch_size]).data)
        return np.concatenate(outs)

    def run_config(self) -> dict:
        return {"model": self.cfg.to_dict(), "mode": self.mode, "seed": self.seed,
                "freeze_decoder": self.freeze_decoder}


def _as_nhwc(images) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[..., None]
    return images


def load_model(checkpoint_dir) -> SegmentationModel:
    arrays, config = load_checkpoint(checkpoint_dir)
    model = SegmentationModel(ModelConfig.from_dict(config["model"]), config["mode"], config.get("seed", 0),
                              config.get("freeze_decoder", False))
    assign(model.params, arrays)
    return model
