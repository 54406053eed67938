import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfbp.dit import (
    ConfigError,
    DiTConfig,
    DiTModel,
    FrozenError,
    adaln,
    multi_head_attention,
    patchify,
    sinusoidal_embedding,
    unpatchify,
)
from dfbp.tensor import ShapeError, Tensor, float64_mode

SMALL = dict(image_h=8, image_w=8, channels=1, patch_size=2, hidden_dim=16, depth=2, num_heads=2, T=50)


def _rand(seed, *shape):
    return np.random.default_rng(seed).normal(size=shape)


class TestPatchify:
    def test_layout_raster_order_channels_contiguous(self):
        x = np.arange(4 * 4 * 2, dtype=np.float64).reshape(4, 4, 2)
        z = patchify(Tensor(x), 2).data
        assert z.shape == (4, 8)
        # token 1 is the top-right patch; its rows are pixels (0,2),(0,3),(1,2),(1,3)
        expect = np.concatenate([x[0, 2], x[0, 3], x[1, 2], x[1, 3]])
        np.testing.assert_array_equal(z[1], expect)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
    def test_roundtrip(self, gh, gw, P, C):
        x = _rand(gh * 100 + gw, gh * P, gw * P, C).astype(np.float32)
        z = patchify(Tensor(x), P)
        np.testing.assert_array_equal(unpatchify(z, gh * P, gw * P, C, P).data, x)

    def test_batched(self):
        x = _rand(0, 3, 4, 4, 1)
        assert patchify(Tensor(x), 2).shape == (3, 4, 4)

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            patchify(Tensor(np.zeros((5, 4, 1))), 2)


class TestSinusoidal:
    def test_t_zero(self):
        e = sinusoidal_embedding(0, 8).data
        np.testing.assert_array_equal(e, [0, 0, 0, 0, 1, 1, 1, 1])

    def test_hand_values(self):
        e = sinusoidal_embedding(1, 4, dtype=np.float64).data
        # frequencies 1 and 10000^(-1/2) = 0.01
        np.testing.assert_allclose(e, [math.sin(1), math.sin(0.01), math.cos(1), math.cos(0.01)])

    def test_odd_dim(self):
        with pytest.raises(ShapeError):
            sinusoidal_embedding(1, 5)

    def test_distinct_timesteps(self):
        e = sinusoidal_embedding(np.arange(1, 1001), 32, dtype=np.float64).data
        d = np.linalg.norm(e[:, None] - e[None], axis=-1) + np.eye(1000)
        assert d.min() > 1e-3


class TestAdaLN:
    def test_identity_modulation_is_layer_norm(self):
        h = Tensor([[1.0, 2.0, 3.0]], dtype=np.float64)
        out = adaln(h, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0).data
        s = math.sqrt(2 / 3)
        np.testing.assert_allclose(out, [[-1 / s, 0, 1 / s]])

    def test_explicit_scale_shift(self):
        h = Tensor([[1.0, 2.0, 3.0]], dtype=np.float64)
        out = adaln(h, Tensor([2.0, 2.0, 2.0]), Tensor([1.0, 1.0, 1.0]), eps=0.0).data
        s = math.sqrt(2 / 3)
        np.testing.assert_allclose(out, [[1 - 2 / s, 1, 1 + 2 / s]])

    def test_per_sample_broadcast_over_tokens(self):
        h = Tensor(_rand(1, 2, 5, 4))
        g = Tensor(np.array([[1.0] * 4, [3.0] * 4]))
        b = Tensor(np.zeros((2, 4)))
        out = adaln(h, g, b).data
        base = adaln(h, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        np.testing.assert_allclose(out[1], 3 * base[1])
        np.testing.assert_allclose(out[0], base[0])


@pytest.fixture
def f64():
    with float64_mode():
        yield


@pytest.mark.usefixtures("f64")
class TestAttention:
    def _weights(self, D, seed=0):
        r = np.random.default_rng(seed)
        return [Tensor(r.normal(size=s) * 0.3) for s in [(D, 3 * D), (3 * D,), (D, D), (D,)]]

    def test_single_token_returns_value_projection(self):
        D = 8
        w = self._weights(D)
        h = Tensor(_rand(2, 1, 1, D))
        out = multi_head_attention(h, *w, num_heads=2).data
        v = h.data @ w[0].data[:, 2 * D:] + w[1].data[2 * D:]
        np.testing.assert_allclose(out, v @ w[2].data + w[3].data, atol=1e-12)

    def test_permutation_equivariant(self):
        D = 8
        w = self._weights(D, 3)
        h = _rand(4, 1, 6, D)
        perm = np.array([3, 0, 5, 1, 4, 2])
        a = multi_head_attention(Tensor(h), *w, num_heads=4).data
        b = multi_head_attention(Tensor(h[:, perm]), *w, num_heads=4).data
        np.testing.assert_allclose(b, a[:, perm], atol=1e-12)

    def test_matches_explicit_loop(self):
        D, heads = 8, 2
        w = [t.data for t in self._weights(D, 5)]
        h = _rand(6, 1, 4, D)[0]
        out = multi_head_attention(Tensor(h[None]), *[Tensor(x) for x in w], num_heads=heads).data[0]
        qkv = h @ w[0] + w[1]
        dh = D // heads
        cat = []
        for k in range(heads):
            q = qkv[:, k * dh:(k + 1) * dh]
            kk = qkv[:, D + k * dh:D + (k + 1) * dh]
            v = qkv[:, 2 * D + k * dh:2 * D + (k + 1) * dh]
            s = q @ kk.T / math.sqrt(dh)
            a = np.exp(s - s.max(1, keepdims=True))
            a /= a.sum(1, keepdims=True)
            cat.append(a @ v)
        np.testing.assert_allclose(out, np.concatenate(cat, 1) @ w[2] + w[3], atol=1e-12)


class TestModel:
    def test_config_errors(self):
        with pytest.raises(ConfigError):
            DiTConfig(image_h=10, patch_size=4)
        with pytest.raises(ConfigError):
            DiTConfig(hidden_dim=30, num_heads=4)
        with pytest.raises(ConfigError):
            DiTConfig.from_dict({"bogus": 1})

    def test_fresh_block_is_identity(self):
        m = DiTModel(DiTConfig(**SMALL), seed=0)
        h = Tensor(np.random.default_rng(0).normal(size=(3, 17, 16)).astype(np.float32))
        c = m.condition(np.array([1, 20, 50]))
        np.testing.assert_array_equal(m.block(0, h, c).data, h.data)

    def test_fresh_output_zero(self):
        m = DiTModel(DiTConfig(**SMALL), seed=0)
        out = m(np.random.default_rng(0).normal(size=(2, 8, 8, 1)).astype(np.float32), 7)
        assert np.all(out.data == 0)

    @pytest.mark.parametrize("pooling", ["cls", "mean"])
    @pytest.mark.parametrize("P,C,D,heads", [(2, 1, 16, 2), (4, 3, 8, 1), (1, 1, 8, 4)])
    def test_output_shape(self, pooling, P, C, D, heads):
        cfg = DiTConfig(image_h=8, image_w=4, channels=C, patch_size=P, hidden_dim=D,
                        depth=1, num_heads=heads, T=10, feature_pooling=pooling)
        m = DiTModel(cfg).randomize_(1)
        assert m(np.zeros((8, 4, C), np.float32), 3).shape == (8, 4, C)
        assert m(np.zeros((2, 8, 4, C), np.float32), np.array([1, 10])).shape == (2, 8, 4, C)

    def test_rejects_bad_timestep_and_shape(self):
        m = DiTModel(DiTConfig(**SMALL))
        with pytest.raises(ShapeError):
            m(np.zeros((8, 8, 1), np.float32), 51)
        with pytest.raises(ShapeError):
            m(np.zeros((4, 4, 1), np.float32), 1)

    def test_same_seed_same_params(self):
        a, b = DiTModel(DiTConfig(**SMALL), 3), DiTModel(DiTConfig(**SMALL), 3)
        assert a.checksum() == b.checksum()
        assert a.checksum() != DiTModel(DiTConfig(**SMALL), 4).checksum()

    def test_features_need_frozen_model(self):
        m = DiTModel(DiTConfig(**SMALL))
        with pytest.raises(FrozenError):
            m.features(np.zeros((8, 8, 1), np.float32))

    def test_features_shape_and_batch_consistency(self):
        m = DiTModel(DiTConfig(**SMALL)).randomize_(2, std=0.2)
        m.freeze()
        x = np.random.default_rng(1).normal(size=(3, 8, 8, 1)).astype(np.float32)
        f = m.features(x)
        assert f.shape == (3, 16)
        np.testing.assert_allclose(m.features(x[1]), f[1], atol=1e-5)

    def test_mean_pooling_features(self):
        cfg = DiTConfig(**{**SMALL, "feature_pooling": "mean"})
        m = DiTModel(cfg).randomize_(2, std=0.2)
        m.freeze()
        x = np.random.default_rng(1).normal(size=(8, 8, 1)).astype(np.float32)
        h, _ = m.encode(Tensor(x[None]), np.array([1]))
        np.testing.assert_allclose(m.features(x), h.data[0].mean(0), atol=1e-6)
