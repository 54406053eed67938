"""Score regression on frozen encoder features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import container
from .dit import DiTModel, FrozenError
from .optim import AdamWState, adamw_step
from .rng import DiffusionRng
from .tensor import Tensor, backward, matmul, mse, relu

SCORE_MIN, SCORE_MAX = 1.0, 5.0


@dataclass
class HeadConfig:
    hidden: int | None = None  # None -> ceil(D / 2)
    steps: int = 2000
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch: int = 0  # 0 -> full batch
    init_std: float = 0.02
    standardize: bool = True
    clamp: bool = True


class RegressionHead:
    """linear2(relu(linear1(feature))) with a single output."""

    def __init__(self, dim: int, hidden: int | None = None, seed: int = 0, init_std: float = 0.02):
        hidden = hidden or math.ceil(dim / 2)
        rng = DiffusionRng(seed)
        self.dim, self.hidden = dim, hidden
        self.params = {
            "fc1.weight": Tensor(rng.normal((dim, hidden)) * np.float32(init_std), requires_grad=True),
            "fc1.bias": Tensor(np.zeros(hidden, np.float32), requires_grad=True),
            "fc2.weight": Tensor(rng.normal((hidden, 1)) * np.float32(init_std), requires_grad=True),
            "fc2.bias": Tensor(np.zeros(1, np.float32), requires_grad=True),
        }

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, feats: Tensor) -> Tensor:
        p = self.params
        hid = relu(matmul(feats, p["fc1.weight"]) + p["fc1.bias"])
        return (matmul(hid, p["fc2.weight"]) + p["fc2.bias"]).reshape(feats.shape[:-1])

    def fold_input_affine(self, mean: np.ndarray, scale: np.ndarray) -> None:
        """Absorb ``(f - mean) / scale`` into linear1 so raw features can be fed."""
        w = self.params["fc1.weight"].data.astype(np.float64) / scale[:, None]
        b = self.params["fc1.bias"].data.astype(np.float64) - mean @ w
        self.params["fc1.weight"].data = w.astype(np.float32)
        self.params["fc1.bias"].data = b.astype(np.float32)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def save(self, path) -> None:
        container.save(path, {"kind": "regression-head", "dim": self.dim, "hidden": self.hidden},
                       self.state_arrays())

    @classmethod
    def load(cls, path) -> "RegressionHead":
        header, tensors = container.load(path)
        if header.get("kind") != "regression-head":
            raise container.ContainerError(f"{path}: not a regression head file")
        head = cls(header["dim"], header["hidden"])
        for k, v in tensors.items():
            head.params[k].data = v
        return head


def head_forward(head: RegressionHead, feature) -> float | np.ndarray:
    """Score for one (D,) feature vector, or an (n,) array for an (n, D) stack."""
    f = np.asarray(feature, dtype=np.float32)
    out = head.forward(Tensor(np.atleast_2d(f))).data
    return float(out[0]) if f.ndim == 1 else out


def encode_dataset(encoder: DiTModel, images: np.ndarray, t_feat: int = 1) -> np.ndarray:
    """Feature matrix, one image at a time so results do not depend on grouping."""
    if not encoder.frozen:
        raise FrozenError("encoder must be frozen before feature extraction")
    return np.stack([encoder.features(img, t_feat) for img in np.asarray(images, np.float32)])


def train_head_on_features(feats: np.ndarray, y: np.ndarray, cfg: HeadConfig, seed: int,
                           feature_fn=None) -> RegressionHead:
    """AdamW on MSE over a fixed feature matrix.

    ``feature_fn(idx)``, when given, recomputes the features of rows ``idx``
    each step instead of slicing ``feats`` (used to check that caching is exact).
    """
    feats = np.asarray(feats, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    n, dim = feats.shape
    if n == 0:
        raise ValueError("no training samples")
    head = RegressionHead(dim, cfg.hidden, seed=seed, init_std=cfg.init_std)
    head.params["fc2.bias"].data[:] = y.mean()
    if cfg.standardize:
        mean = feats.astype(np.float64).mean(axis=0)
        scale = feats.astype(np.float64).std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean, scale = np.zeros(dim), np.ones(dim)
    mean32, scale32 = mean.astype(np.float32), scale.astype(np.float32)
    state = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = DiffusionRng.from_labels(seed, 0xBA7C)
    bs = n if cfg.batch <= 0 else min(cfg.batch, n)
    perm, cursor = np.arange(n), n
    for _ in range(cfg.steps):
        if bs == n:
            idx = perm
        else:
            if cursor + bs > n:
                perm, cursor = order_rng.permutation(n), 0
            idx = perm[cursor:cursor + bs]
            cursor += bs
        f = feats[idx] if feature_fn is None else np.asarray(feature_fn(idx), np.float32)
        x = Tensor((f - mean32) / scale32)
        loss = mse(head.forward(x), Tensor(y[idx]))
        backward(loss)
        adamw_step(head.params, state)
    head.fold_input_affine(mean, scale)
    return head


def finetune_head(encoder: DiTModel, data, cfg: HeadConfig | None = None, seed: int = 0,
                  t_feat: int = 1, cache_features: bool = True) -> RegressionHead:
    """Train only a regression head on top of a frozen encoder."""
    cfg = cfg or HeadConfig()
    if not encoder.frozen:
        raise FrozenError("finetune_head requires a frozen encoder")
    if len(data) == 0:
        raise ValueError("finetune_head needs at least one labeled sample")
    images = np.stack([s.image for s in data]).astype(np.float32)
    y = np.array([s.score for s in data], dtype=np.float32)
    feats = encode_dataset(encoder, images, t_feat)
    fn = None if cache_features else (lambda idx: encode_dataset(encoder, images[idx], t_feat))
    return train_head_on_features(feats, y, cfg, seed, feature_fn=fn)


def predict(encoder: DiTModel, head: RegressionHead, image, t_feat: int = 1,
            clamp: bool = True) -> float | np.ndarray:
    """Score of one image (H, W, C) or an array of scores for a stack."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3:
        out = head_forward(head, encoder.features(img, t_feat))
    else:
        out = head_forward(head, encode_dataset(encoder, img, t_feat))
    if clamp:
        out = np.clip(out, SCORE_MIN, SCORE_MAX)
    return float(out) if img.ndim == 3 else out
