import numpy as np
import pytest

from dfbp.data import generate_synthetic_corpus
from dfbp.dit import DiTConfig, DiTModel, FrozenError
from dfbp.head import (
    HeadConfig,
    RegressionHead,
    encode_dataset,
    finetune_head,
    head_forward,
    predict,
    train_head_on_features,
)
from dfbp.tensor import Tensor

CFG = DiTConfig(image_h=8, image_w=8, channels=1, patch_size=2, hidden_dim=16, depth=1,
                num_heads=2, T=20)


@pytest.fixture(scope="module")
def encoder():
    m = DiTModel(CFG).randomize_(1, std=0.3)
    m.freeze()
    return m


@pytest.fixture(scope="module")
def data():
    return generate_synthetic_corpus(32, 8, seed=4)


def test_forward_hand_value():
    h = RegressionHead(2, hidden=2)
    h.params["fc1.weight"].data = np.array([[1.0, -1.0], [2.0, 0.0]], np.float32)
    h.params["fc1.bias"].data = np.array([0.0, 0.5], np.float32)
    h.params["fc2.weight"].data = np.array([[1.0], [3.0]], np.float32)
    h.params["fc2.bias"].data = np.array([0.25], np.float32)
    # f=(1,1): hidden = relu(3, -0.5) = (3, 0) -> 3 + 0.25
    assert head_forward(h, [1.0, 1.0]) == pytest.approx(3.25)
    np.testing.assert_allclose(head_forward(h, np.array([[1.0, 1.0], [0.0, 0.0]])), [3.25, 1.75])


def test_default_hidden_width():
    assert RegressionHead(17).hidden == 9


def test_fold_input_affine_equivalence():
    rng = np.random.default_rng(0)
    h = RegressionHead(4, seed=1, init_std=0.5)
    mean, scale = rng.normal(size=4), rng.uniform(0.5, 2, size=4)
    f = rng.normal(size=(5, 4))
    before = head_forward(h, (f - mean) / scale)
    h.fold_input_affine(mean, scale)
    np.testing.assert_allclose(head_forward(h, f), before, rtol=1e-5, atol=1e-5)


def test_overfits_small_set(encoder, data):
    head = finetune_head(encoder, data, HeadConfig(steps=3000, lr=3e-3, weight_decay=0.0, hidden=32),
                         seed=0)
    pred = predict(encoder, head, np.stack([s.image for s in data]), clamp=False)
    y = np.array([s.score for s in data])
    assert np.mean((pred - y) ** 2) < 0.05


def test_encoder_untouched(encoder, data):
    before = encoder.checksum()
    finetune_head(encoder, data, HeadConfig(steps=50), seed=0)
    assert encoder.checksum() == before
    assert all(p.grad is None and not p.requires_grad for p in encoder.params.values())


def test_requires_frozen_encoder(data):
    with pytest.raises(FrozenError):
        finetune_head(DiTModel(CFG), data, HeadConfig(steps=1))


def test_deterministic_and_cache_exact(encoder, data):
    cfg = HeadConfig(steps=40, batch=8)
    a = finetune_head(encoder, data, cfg, seed=3)
    b = finetune_head(encoder, data, cfg, seed=3)
    c = finetune_head(encoder, data, cfg, seed=3, cache_features=False)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
        np.testing.assert_array_equal(a.params[k].data, c.params[k].data)


def test_encode_dataset_matches_single(encoder, data):
    imgs = np.stack([s.image for s in data[:3]])
    feats = encode_dataset(encoder, imgs)
    np.testing.assert_array_equal(feats[2], encoder.features(imgs[2]))


def test_predict_scalar_and_clamped(encoder, data):
    head = train_head_on_features(np.zeros((4, 16)), np.full(4, 9.0), HeadConfig(steps=0), seed=0)
    out = predict(encoder, head, data[0].image)
    assert isinstance(out, float) and out == 5.0


def test_save_load(tmp_path, encoder, data):
    head = finetune_head(encoder, data, HeadConfig(steps=10), seed=0)
    head.save(tmp_path / "h.dfbp")
    back = RegressionHead.load(tmp_path / "h.dfbp")
    f = encode_dataset(encoder, np.stack([s.image for s in data[:4]]))
    np.testing.assert_array_equal(head_forward(back, f), head_forward(head, f))


def test_only_head_params_receive_gradients(encoder):
    head = RegressionHead(16, seed=0)
    x = Tensor(encoder.features(np.zeros((2, 8, 8, 1), np.float32)))
    out = head.forward(x).sum()
    from dfbp.tensor import backward

    backward(out)
    assert all(p.grad is not None for p in head.params.values())
    assert all(p.grad is None for p in encoder.params.values())
