import warnings

import numpy as np
import pytest

from usadapt.aux_encoder import AuxConfig, AuxEncoder, pca_rgb
from usadapt.fusion import Fusion, FusionConfig, fuse_pyramid, interleave_permutation, project_aux
from usadapt.hiera import FeaturePyramid
from usadapt.tensor import ConfigError, ShapeError, Tensor, float64_mode, interleave, no_grad


class TestAuxEncoder:
    def test_grid_shape(self):
        enc = AuxEncoder(AuxConfig(), seed=0)
        with no_grad():
            out = enc(Tensor(np.random.default_rng(0).uniform(size=(3, 224, 224, 1))))
        assert out.shape == (3, 14, 14, 48)

    def test_never_trainable(self):
        enc = AuxEncoder(AuxConfig())
        assert enc.trainable_parameters() == {}
        assert not any(p.trainable for p in enc.params.values())

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            AuxEncoder(AuxConfig())(Tensor(np.zeros((1, 40, 40, 1))))

    def test_deterministic(self):
        x = Tensor(np.random.default_rng(1).uniform(size=(1, 32, 32, 1)))
        a = AuxEncoder(AuxConfig(), seed=2)(x).data
        b = AuxEncoder(AuxConfig(), seed=2)(x).data
        assert a.tobytes() == b.tobytes()

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            AuxConfig(d_dino=48, heads=5)


class TestPCA:
    def test_rank_one(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=6)
        scal = rng.normal(size=(1, 4, 5, 1))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = pca_rgb(scal * v)
        assert abs(res.explained[0, 0] - 1.0) < 1e-9
        assert list(res.degenerate[0]) == [False, True, True]
        assert np.all(res.rgb[0, ..., 1:] == 0.5)
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)

    def test_zero_variance_is_gray(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = pca_rgb(np.ones((1, 3, 3, 4)))
        assert res.degenerate.all() and np.all(res.rgb == 0.5)

    def test_range_and_orthonormality(self):
        f = np.random.default_rng(1).normal(size=(2, 6, 7, 8))
        res = pca_rgb(f)
        assert res.rgb.min() >= 0.0 and res.rgb.max() <= 1.0
        for comps in res.components:
            assert np.max(np.abs(comps @ comps.T - np.eye(3))) < 1e-6

    def test_sign_convention(self):
        res = pca_rgb(np.random.default_rng(2).normal(size=(1, 5, 5, 4)))
        for c in res.components[0]:
            assert c[np.argmax(np.abs(c))] > 0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_eigensolver(self, seed):
        f = np.random.default_rng(seed).normal(size=(1, 5, 5, 4))
        res = pca_rgb(f)
        x = f[0].reshape(-1, 4)
        xc = x - x.mean(axis=0)
        vals, vecs = np.linalg.eigh(xc.T @ xc / (len(x) - 1))
        order = np.argsort(vals)[::-1][:3]
        ours = xc @ res.components[0].T
        oracle = xc @ vecs[:, order]
        for c in range(3):
            err = min(np.max(np.abs(ours[:, c] - oracle[:, c])), np.max(np.abs(ours[:, c] + oracle[:, c])))
            assert err < 1e-4
        np.testing.assert_allclose(res.explained[0], vals[order] / vals.sum(), atol=1e-8)

    def test_requires_three_channels(self):
        with pytest.raises(ShapeError):
            pca_rgb(np.zeros((1, 3, 3, 2)))


def random_pyramid(rng, b=1, d=4, base=8, n=3):
    levels = [Tensor(rng.normal(size=(b, base >> i, base >> i, d))) for i in range(n)]
    return FeaturePyramid(levels, [4 * 2 ** i for i in range(n)])


class TestFusion:
    def test_identity_projection(self):
        x = np.random.default_rng(0).normal(size=(1, 3, 3, 4))
        out = project_aux(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_full_size_dims(self):
        fusion = Fusion(FusionConfig("interleave"), d_dino=384, d_hiera=256)
        out = project_aux(Tensor(np.zeros((1, 14, 14, 384))), fusion.params["fusion.w_proj"], fusion.params["fusion.b_proj"])
        assert out.shape == (1, 14, 14, 256)

    def test_projection_oracle(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=(1, 2, 2, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
        with float64_mode():
            out = project_aux(Tensor(x), Tensor(w), Tensor(b)).data
        expected = np.array([[[[sum(x[0, i, j, k] * w[k, o] for k in range(3)) + b[o] for o in range(2)]
                               for j in range(2)] for i in range(2)]])
        assert np.max(np.abs(out - expected)) < 1e-6

    def test_projection_axis_mismatch(self):
        with pytest.raises(ShapeError):
            project_aux(Tensor(np.zeros((1, 2, 2, 5))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))

    def test_interleave_self_pairs(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 2, 5)))
        out = interleave(x, x).data
        np.testing.assert_array_equal(out[..., 0::2], out[..., 1::2])

    def test_interleave_round_trip(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 3, 3, 6)), rng.normal(size=(2, 3, 3, 6))
        out = interleave(Tensor(a), Tensor(b)).data
        assert out[..., 0::2].tobytes() == Tensor(a).data.tobytes()
        assert out[..., 1::2].tobytes() == Tensor(b).data.tobytes()

    def test_interleave_shape_mismatch(self):
        with pytest.raises(ShapeError):
            interleave(Tensor(np.zeros((1, 2, 2, 3))), Tensor(np.zeros((1, 2, 2, 4))))

    def test_mode_none_passthrough(self):
        pyr = random_pyramid(np.random.default_rng(0))
        fusion = Fusion(FusionConfig("none"), 6, 4)
        assert fuse_pyramid(pyr, None, fusion) is pyr
        assert fusion.trainable_parameters() == {}

    def test_full_size_width(self):
        rng = np.random.default_rng(0)
        levels = [Tensor(rng.normal(size=(1, s, s, 256))) for s in (56, 28, 14)]
        aux = Tensor(rng.normal(size=(1, 14, 14, 384)))
        with no_grad():
            out = fuse_pyramid(FeaturePyramid(levels, [4, 8, 16]), aux, Fusion(FusionConfig(), 384, 256))
        assert [lvl.shape for lvl in out.levels] == [(1, 56, 56, 512), (1, 28, 28, 512), (1, 14, 14, 512)]

    def test_concat_interleave_permutation(self):
        rng = np.random.default_rng(5)
        pyr = random_pyramid(rng, d=4)
        aux = Tensor(rng.normal(size=(1, 2, 2, 6)))
        cat = fuse_pyramid(pyr, aux, Fusion(FusionConfig("concat"), 6, 4, seed=1))
        inter = fuse_pyramid(pyr, aux, Fusion(FusionConfig("interleave"), 6, 4, seed=1))
        perm = interleave_permutation(4)
        for c, i in zip(cat.levels, inter.levels):
            assert c.shape == i.shape
            assert c.data[..., perm].tobytes() == i.data.tobytes()

    @pytest.mark.parametrize("mode", ["concat", "interleave"])
    def test_projection_receives_gradient(self, mode):
        rng = np.random.default_rng(6)
        pyr = random_pyramid(rng, d=4)
        fusion = Fusion(FusionConfig(mode), 6, 4)
        out = fuse_pyramid(pyr, Tensor(rng.normal(size=(1, 2, 2, 6))), fusion)
        sum(((lvl * lvl).sum() for lvl in out.levels), Tensor(np.zeros(1))).backward()
        assert all(np.linalg.norm(p.grad) > 0 for p in fusion.params.values())

    def test_spatial_extents_preserved(self):
        rng = np.random.default_rng(7)
        pyr = random_pyramid(rng, d=4, base=16)
        out = fuse_pyramid(pyr, Tensor(rng.normal(size=(1, 3, 3, 6))), Fusion(FusionConfig(), 6, 4))
        assert [lvl.shape[1:3] for lvl in out.levels] == [lvl.shape[1:3] for lvl in pyr.levels]

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            FusionConfig("sum")
