"""Named parameters, seeded initialisers and checkpoint directories."""
from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .tensor import Tensor, load_tensor, save_tensor


class Parameter(Tensor):
    """A named tensor whose ``trainable`` flag drives ``requires_grad``."""

    def __init__(self, data, name: str, trainable: bool = False):
        super().__init__(np.asarray(data, dtype=np.float32), requires_grad=trainable, name=name)

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None


def param_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per tensor name, so adding/removing modules never shifts other weights
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def normal(seed, name, shape, std, trainable=False) -> Parameter:
    data = param_rng(seed, name).normal(0.0, std, size=shape)
    return Parameter(data, name, trainable)


def zeros(name, shape, trainable=False) -> Parameter:
    return Parameter(np.zeros(shape), name, trainable)


def ones(name, shape, trainable=False) -> Parameter:
    return Parameter(np.ones(shape), name, trainable)


def sincos_2d(h: int, w: int, d: int) -> np.ndarray:
    """Fixed 2-D sinusoidal position code of shape (h, w, d); needs d % 4 == 0."""
    quarter = d // 4
    freq = 1.0 / (10000.0 ** (np.arange(quarter) / max(quarter, 1)))
    ys = np.arange(h)[:, None] * freq[None, :]
    xs = np.arange(w)[:, None] * freq[None, :]
    code = np.concatenate([
        np.broadcast_to(np.sin(ys)[:, None, :], (h, w, quarter)),
        np.broadcast_to(np.cos(ys)[:, None, :], (h, w, quarter)),
        np.broadcast_to(np.sin(xs)[None, :, :], (h, w, quarter)),
        np.broadcast_to(np.cos(xs)[None, :, :], (h, w, quarter)),
    ], axis=-1)
    out = np.zeros((h, w, d))
    out[..., :code.shape[-1]] = code
    return out


def save_checkpoint(directory, params: dict[str, Parameter], config: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, p in sorted(params.items()):
        save_tensor(directory / f"{name}.tensor", p, name)
    (directory / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {directory}")
    tensors = {}
    for path in sorted(directory.glob("*.tensor")):
        name, data = load_tensor(path)
        tensors[name] = data
    config = json.loads((directory / "config.json").read_text())
    return tensors, config


def assign(params: dict[str, Parameter], arrays: dict[str, np.ndarray], strict: bool = True) -> None:
    """Copy checkpoint arrays into existing parameters by name."""
    missing = sorted(set(params) - set(arrays))
    if strict and missing:
        raise KeyError(f"checkpoint is missing tensors: {missing[:5]}")
    for name, p in params.items():
        if name not in arrays:
            continue
        if arrays[name].shape != p.shape:
            raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} != parameter shape {p.shape}")
        p.data = arrays[name].astype(np.float32).copy()
