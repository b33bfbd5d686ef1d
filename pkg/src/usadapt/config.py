"""Run configuration: one JSON document with model / train / data sections and an output directory."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import PhantomSpec
from .model import ModelConfig
from .tensor import ConfigError
from .train import TrainConfig


def _strict(cls, data, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


@dataclass
class DataConfig:
    """Either an existing dataset directory (``path``) or a phantom spec to generate in memory."""
    path: str | None = None
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    split_fractions: list[float] = field(default_factory=lambda: [0.7, 0.15, 0.15])
    split_seed: int = 0

    def __post_init__(self):
        if isinstance(self.phantom, dict):
            self.phantom = _strict(PhantomSpec, self.phantom, "data.phantom")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("data.split_fractions must be three fractions summing to 1")

    def to_dict(self) -> dict:
        return {"path": self.path, "phantom": self.phantom.to_dict(),
                "split_fractions": list(self.split_fractions), "split_seed": self.split_seed}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(doc) - {"model", "train", "data", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(doc.get("model"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid 'model': {exc}") from exc
        return cls(model=model,
                   train=_strict(TrainConfig, doc.get("train"), "train"),
                   data=_strict(DataConfig, doc.get("data"), "data"),
                   output_dir=str(doc.get("output_dir", "runs/default")))

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train),
                "data": self.data.to_dict(), "output_dir": self.output_dir}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return RunConfig.from_dict(doc)
