import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usadapt.hiera import (AdapterWeights, HieraConfig, HieraEncoder, adapter_forward, adapter_rank,
                           hiera_block, init_block)
from usadapt.tensor import ConfigError, ShapeError, Tensor, float64_mode, no_grad


def gelu_scalar(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def adapter_loop(x, wd, bd, wu, bu):
    """Scalar-by-scalar evaluation of GELU(x W_down + b_down) W_up + b_up + x."""
    d, r = wd.shape
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape[:-1]):
        vec = x[idx]
        hidden = [gelu_scalar(sum(vec[i] * wd[i, j] for i in range(d)) + bd[j]) for j in range(r)]
        for k in range(d):
            out[idx + (k,)] = sum(hidden[j] * wu[j, k] for j in range(r)) + bu[k] + vec[k]
    return out


def adapter_from(arrays):
    return AdapterWeights(*[Tensor(a) for a in arrays])


def random_adapter(rng, d):
    r = d // 4
    return [rng.normal(size=(d, r)), rng.normal(size=r), rng.normal(size=(r, d)), rng.normal(size=d)]


class TestAdapter:
    def test_rank(self):
        assert adapter_rank(256) == 64
        assert adapter_rank(64) == 16
        with pytest.raises(ConfigError):
            adapter_rank(30)

    def test_identity_at_init(self):
        enc = HieraEncoder(HieraConfig(), seed=3)
        a = enc.adapters["s1.b0"]
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 3, 64)))
        assert adapter_forward(x, a).data.tobytes() == x.data.tobytes()

    def test_hand_weights(self):
        x = np.array([1.0, 0.0, 0.0, 0.0]).reshape(1, 1, 1, 4)
        wd = np.array([[0.5], [0.1], [0.2], [0.3]])
        bd = np.array([0.1])
        wu = np.array([[1.0, -1.0, 2.0, 0.5]])
        bu = np.array([0.0, 0.1, 0.0, -0.2])
        with float64_mode():
            out = adapter_forward(Tensor(x), adapter_from([wd, bd, wu, bu])).data.reshape(-1)
        g = gelu_scalar(0.6)
        np.testing.assert_allclose(out, [1 + g, -g + 0.1, 2 * g, 0.5 * g - 0.2], atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(b=st.integers(1, 2), h=st.integers(1, 4), w=st.integers(1, 4), d=st.sampled_from([4, 8]),
           seed=st.integers(0, 10_000))
    def test_matches_scalar_loop(self, b, h, w, d, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(b, h, w, d))
        ws = random_adapter(rng, d)
        out = adapter_forward(Tensor(x), adapter_from(ws)).data
        assert np.max(np.abs(out - adapter_loop(x, *ws))) < 1e-5

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            adapter_forward(Tensor(np.zeros((1, 1, 1, 6))), adapter_from([np.zeros((6, 1))] * 4))


def zero_block(d):
    bw = init_block(0, "blk", d, 4)
    for k, p in bw.items():
        if ".attn." in k or ".mlp." in k:
            p.data = np.zeros_like(p.data)
    return bw


class TestBlock:
    def test_adapter_at_init_is_transparent(self):
        enc = HieraEncoder(HieraConfig(), seed=1)
        x = Tensor(np.random.default_rng(2).normal(size=(1, 4, 4, 32)))
        plain = hiera_block(x, enc.backbone, "hiera.s0.b0", 1)
        adapted = hiera_block(x, enc.backbone, "hiera.s0.b0", 1, enc.adapters["s0.b0"])
        assert plain.data.tobytes() == adapted.data.tobytes()

    def test_shape_preserved(self):
        bw = init_block(0, "blk", 128, 4)
        with no_grad():
            out = hiera_block(Tensor(np.zeros((1, 14, 14, 128))), bw, "blk", 4)
        assert out.shape == (1, 14, 14, 128)

    @pytest.mark.parametrize("position", ["post_attention", "post_mlp"])
    def test_zero_backbone_reduces_to_adapter(self, position):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 2, 3, 8))
        ws = random_adapter(rng, 8)
        with float64_mode():
            out = hiera_block(Tensor(x), zero_block(8), "blk", 2, adapter_from(ws), position).data
        assert np.max(np.abs(out - adapter_loop(x, *ws))) < 1e-10


class TestEncoder:
    def test_full_resolution_levels(self):
        enc = HieraEncoder(HieraConfig(), seed=0)
        with no_grad():
            pyr = enc(Tensor(np.random.default_rng(0).uniform(size=(2, 224, 224, 1))))
        assert pyr.shapes == [(2, 56, 56, 64), (2, 28, 28, 64), (2, 14, 14, 64)]
        assert pyr.strides == [4, 8, 16]

    def test_doubling_input_doubles_levels(self):
        enc = HieraEncoder(HieraConfig(), seed=0)
        with no_grad():
            small = enc(Tensor(np.zeros((1, 32, 32, 1)))).shapes
            big = enc(Tensor(np.zeros((1, 64, 64, 1)))).shapes
        assert [(b[1], b[2]) for b in big] == [(2 * s[1], 2 * s[2]) for s in small]

    def test_divisibility_error_names_multiple(self):
        enc = HieraEncoder(HieraConfig(), seed=0)
        with pytest.raises(ShapeError, match="multiple of 16"):
            enc(Tensor(np.zeros((1, 40, 40, 1))))

    def test_trainable_set(self):
        assert HieraEncoder(HieraConfig(adapter_enabled=False)).trainable_parameters() == {}
        params = HieraEncoder(HieraConfig()).trainable_parameters()
        assert len(params) == 12
        assert all(name.startswith("adapter.") for name in params)
        assert all(not p.trainable for p in HieraEncoder(HieraConfig()).backbone.values())

    def test_identity_at_init_full_encoder(self):
        x = Tensor(np.random.default_rng(8).uniform(size=(2, 32, 48, 1)))
        with no_grad():
            on = HieraEncoder(HieraConfig(adapter_enabled=True), seed=5)(x)
            off = HieraEncoder(HieraConfig(adapter_enabled=False), seed=5)(x)
        for a, b in zip(on.levels, off.levels):
            assert a.data.tobytes() == b.data.tobytes()

    def test_config_lengths_validated(self):
        with pytest.raises(ConfigError):
            HieraConfig(stage_dims=[32, 64])
