import numpy as np
import pytest

from usadapt.aux_encoder import AuxConfig
from usadapt.data import PhantomSpec, generate
from usadapt.decoder import DecoderConfig
from usadapt.hiera import HieraConfig
from usadapt.model import ModelConfig


def make_tiny_config(num_classes=3) -> ModelConfig:
    return ModelConfig(
        hiera=HieraConfig(stage_dims=[8, 16, 16], heads_per_stage=[1, 2, 2], d_hiera=8),
        aux=AuxConfig(depth=1, d_dino=8, heads=1),
        decoder=DecoderConfig(channels=[16, 8, 8], num_classes=num_classes, head_channels=[8, 4]),
    )


@pytest.fixture
def tiny_config():
    return make_tiny_config()


@pytest.fixture(scope="session")
def tiny_samples():
    return generate(PhantomSpec(seed=0, count=6, H=32, W=32))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
