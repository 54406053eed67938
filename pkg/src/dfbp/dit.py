"""Diffusion Transformer noise predictor with adaLN-Zero blocks.

Images are laid out height x width x channels (a leading batch axis is
optional everywhere). Patch tokens are in raster order over the patch grid;
inside a token, pixels are in raster order with each pixel's channels
contiguous.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .rng import DiffusionRng
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    softmax,
)

POOLING_MODES = ("cls", "mean")


class ConfigError(ValueError):
    """Invalid model, schedule or run configuration."""


class FrozenError(RuntimeError):
    """Operation requires a frozen (or unfrozen) encoder."""


@dataclass
class DiTConfig:
    image_h: int = 16
    image_w: int = 16
    channels: int = 1
    patch_size: int = 4
    hidden_dim: int = 32
    depth: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    T: int = 1000
    feature_pooling: str = "cls"
    ln_eps: float = 1e-5
    init_std: float = 0.02

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("image_h", "image_w", "channels", "patch_size", "hidden_dim",
                     "depth", "num_heads", "mlp_ratio", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        P = self.patch_size
        if self.image_h % P or self.image_w % P:
            raise ConfigError(
                f"patch_size {P} must divide image size {self.image_h}x{self.image_w}"
            )
        if self.hidden_dim % 2:
            raise ConfigError(f"hidden_dim must be even, got {self.hidden_dim}")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.feature_pooling not in POOLING_MODES:
            raise ConfigError(f"feature_pooling must be one of {POOLING_MODES}")
        if not self.ln_eps > 0 or not self.init_std >= 0:
            raise ConfigError("ln_eps must be > 0 and init_std >= 0")

    @property
    def num_patches(self) -> int:
        P = self.patch_size
        return (self.image_h // P) * (self.image_w // P)

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2 * self.channels

    @property
    def use_cls(self) -> bool:
        return self.feature_pooling == "cls"

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_h, self.image_w, self.channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiTConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# shape plumbing


def patchify(x: Tensor, P: int) -> Tensor:
    """(…, H, W, C) image -> (…, N, P*P*C) tokens."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected H x W x C image (optionally batched), got {x.shape}")
    batched = x.ndim == 4
    if not batched:
        x = x.reshape((1,) + x.shape)
    B, H, W, C = x.shape
    if H % P or W % P:
        raise ShapeError(f"patch size {P} does not divide image {H}x{W}")
    gh, gw = H // P, W // P
    z = x.reshape(B, gh, P, gw, P, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, gh * gw, P * P * C)
    return z if batched else z.reshape(z.shape[1:])


def unpatchify(z: Tensor, H: int, W: int, C: int, P: int) -> Tensor:
    """Inverse of :func:`patchify`."""
    if not isinstance(z, Tensor):
        z = Tensor(z)
    batched = z.ndim == 3
    if not batched:
        z = z.reshape((1,) + z.shape)
    B, N, L = z.shape
    gh, gw = H // P, W // P
    if H % P or W % P or N != gh * gw or L != P * P * C:
        raise ShapeError(f"tokens {z.shape[1:]} do not tile a {H}x{W}x{C} image with P={P}")
    x = z.reshape(B, gh, gw, P, P, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)
    return x if batched else x.reshape(x.shape[1:])


def sinusoidal_embedding(t, dim: int, dtype=None) -> Tensor:
    """[sin(t w_i) | cos(t w_i)] with w_i = 10000^(-2i/dim), i < dim/2."""
    if dim % 2:
        raise ShapeError(f"embedding dimension must be even, got {dim}")
    half = dim // 2
    tt = np.asarray(t, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * np.arange(half, dtype=np.float64) / dim)
    args = tt[..., None] * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    return Tensor(emb, dtype=dtype)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else y + b


def adaln(h: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """gamma * LayerNorm(h) + beta.

    ``gamma``/``beta`` are per-sample D-vectors ((D,) or (B, D)); they are
    broadcast over the token axis of ``h``.
    """
    if gamma.ndim == h.ndim - 1:
        gamma = gamma.reshape(gamma.shape[:-1] + (1, gamma.shape[-1]))
        beta = beta.reshape(beta.shape[:-1] + (1, beta.shape[-1]))
    return gamma * layer_norm(h, eps) + beta


def modulation(c: Tensor, w: Tensor, b: Tensor, chunks: int) -> list[Tensor]:
    """Linear(c) split into ``chunks`` equal D-vectors along the last axis."""
    m = linear(c, w, b)
    D = m.shape[-1] // chunks
    return [m[..., k * D:(k + 1) * D] for k in range(chunks)]


def multi_head_attention(h: Tensor, w_qkv, b_qkv, w_o, b_o, num_heads: int) -> Tensor:
    """Scaled dot-product self-attention over the token axis of (B, N, D)."""
    B, N, D = h.shape
    dh = D // num_heads
    qkv = linear(h, w_qkv, b_qkv).reshape(B, N, 3, num_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    out = matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, N, D)
    return linear(out, w_o, b_o)


# ---------------------------------------------------------------------------
# model


def _zero_init(name: str) -> bool:
    # adaLN-Zero: modulation linears, residual output projections, final projection
    return (
        ".mod." in name
        or ".proj." in name
        or ".fc2." in name
        or name.startswith("final.out.")
        or name.endswith(".bias")
    )


class DiTModel:
    """Parameters plus forward pass of the noise predictor.

    Parameters live in ``self.params`` (insertion-ordered, name -> Tensor).
    The adaptive norms predict a scale *offset*, so gamma = 1 + Linear(c);
    with zero-initialised modulation this gives gamma = 1, beta = 0 and,
    together with the zeroed residual projections, identity blocks and an
    all-zero output at initialisation.
    """

    def __init__(self, config: DiTConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.frozen = False
        self.params: dict[str, Tensor] = {}
        self._build(seed)

    # -- construction ------------------------------------------------------

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg = self.config
        D, L = cfg.hidden_dim, cfg.patch_dim
        H = cfg.mlp_ratio * D
        shapes: dict[str, tuple[int, ...]] = {
            "embed.weight": (L, D),
            "embed.bias": (D,),
            "pos": (cfg.num_patches + int(cfg.use_cls), D),
        }
        if cfg.use_cls:
            shapes["cls"] = (D,)
        shapes.update({
            "t_mlp.0.weight": (D, D),
            "t_mlp.0.bias": (D,),
            "t_mlp.1.weight": (D, D),
            "t_mlp.1.bias": (D,),
        })
        for i in range(cfg.depth):
            p = f"blocks.{i}"
            shapes.update({
                f"{p}.mod.weight": (D, 4 * D),
                f"{p}.mod.bias": (4 * D,),
                f"{p}.qkv.weight": (D, 3 * D),
                f"{p}.qkv.bias": (3 * D,),
                f"{p}.proj.weight": (D, D),
                f"{p}.proj.bias": (D,),
                f"{p}.fc1.weight": (D, H),
                f"{p}.fc1.bias": (H,),
                f"{p}.fc2.weight": (H, D),
                f"{p}.fc2.bias": (D,),
            })
        shapes.update({
            "final.mod.weight": (D, 2 * D),
            "final.mod.bias": (2 * D,),
            "final.out.weight": (D, L),
            "final.out.bias": (L,),
        })
        return shapes

    def _build(self, seed: int) -> None:
        rng = DiffusionRng(seed)
        std = self.config.init_std
        for name, shape in self.param_shapes().items():
            if _zero_init(name):
                data = np.zeros(shape, dtype=np.float32)
            else:
                data = rng.normal(shape) * np.float32(std)
            self.params[name] = Tensor(data, requires_grad=True)

    def randomize_(self, seed: int, std: float | None = None) -> "DiTModel":
        """Overwrite *every* parameter, zero-init ones included, with N(0, std^2).

        Produces a non-degenerate random network (random-feature baseline,
        gradient checks away from the adaLN-Zero saddle).
        """
        rng = DiffusionRng(seed)
        std = self.config.init_std if std is None else std
        for p in self.params.values():
            p.data = (rng.normal(p.shape, dtype=np.float64) * std).astype(p.dtype)
        return self

    def to(self, dtype) -> "DiTModel":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    # -- state -------------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def freeze(self) -> None:
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        shapes = self.param_shapes()
        if set(arrays) != set(shapes):
            missing = sorted(set(shapes) - set(arrays))
            extra = sorted(set(arrays) - set(shapes))
            raise ShapeError(f"parameter set mismatch; missing={missing} extra={extra}")
        for name, shape in shapes.items():
            arr = np.asarray(arrays[name])
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {arr.shape}")
            self.params[name].data = np.array(arr, dtype=np.float32)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    # -- forward pieces ----------------------------------------------------

    def condition(self, t) -> Tensor:
        """c = MLP(SinusoidalEmbedding(t)); (D,) for scalar t, (B, D) for a vector."""
        p = self.params
        emb = sinusoidal_embedding(t, self.config.hidden_dim, dtype=p["t_mlp.0.weight"].dtype)
        hid = gelu(linear(emb, p["t_mlp.0.weight"], p["t_mlp.0.bias"]))
        return linear(hid, p["t_mlp.1.weight"], p["t_mlp.1.bias"])

    def embed(self, x: Tensor) -> Tensor:
        """(B, H, W, C) -> (B, N[+1], D) with positional rows added and CLS prepended."""
        cfg, p = self.config, self.params
        tokens = linear(patchify(x, cfg.patch_size), p["embed.weight"], p["embed.bias"])
        if not cfg.use_cls:
            return tokens + p["pos"]
        B = tokens.shape[0]
        pos = p["pos"]
        cls = (p["cls"] + pos[0]).reshape(1, 1, cfg.hidden_dim)
        cls = cls * Tensor(np.ones((B, 1, 1), dtype=tokens.dtype))
        return concat([cls, tokens + pos[1:]], axis=1)

    def block(self, i: int, h: Tensor, c: Tensor) -> Tensor:
        """h' = h + MHSA(adaLN(h, c)); h'' = h' + FFN(adaLN(h', c))."""
        cfg, p = self.config, self.params
        pre = f"blocks.{i}"
        s1, b1, s2, b2 = modulation(c, p[f"{pre}.mod.weight"], p[f"{pre}.mod.bias"], 4)
        a = adaln(h, s1 + 1.0, b1, cfg.ln_eps)
        h = h + multi_head_attention(
            a, p[f"{pre}.qkv.weight"], p[f"{pre}.qkv.bias"],
            p[f"{pre}.proj.weight"], p[f"{pre}.proj.bias"], cfg.num_heads,
        )
        a = adaln(h, s2 + 1.0, b2, cfg.ln_eps)
        f = gelu(linear(a, p[f"{pre}.fc1.weight"], p[f"{pre}.fc1.bias"]))
        return h + linear(f, p[f"{pre}.fc2.weight"], p[f"{pre}.fc2.bias"])

    def encode(self, x: Tensor, t) -> tuple[Tensor, Tensor]:
        """Tokens after the last block, plus the conditioning vector."""
        c = self.condition(t)
        if c.ndim == 1:
            c = c.reshape(1, -1)
        h = self.embed(x)
        for i in range(self.config.depth):
            h = self.block(i, h, c)
        return h, c

    def forward(self, xt, t) -> Tensor:
        """Predicted noise, same shape as ``xt``."""
        cfg, p = self.config, self.params
        if not isinstance(xt, Tensor):
            xt = Tensor(xt, dtype=p["embed.weight"].dtype)
        if xt.shape[-3:] != cfg.image_shape or xt.ndim not in (3, 4):
            raise ShapeError(f"expected image of shape {cfg.image_shape}, got {xt.shape}")
        batched = xt.ndim == 4
        if not batched:
            xt = xt.reshape((1,) + xt.shape)
        tt = np.asarray(t)
        if tt.ndim == 0:
            tt = np.full(xt.shape[0], int(tt))
        if tt.shape != (xt.shape[0],):
            raise ShapeError(f"need one timestep per image, got {tt.shape} for batch {xt.shape[0]}")
        if tt.min() < 1 or tt.max() > cfg.T:
            raise ShapeError(f"timestep outside 1..{cfg.T}")
        h, c = self.encode(xt, tt)
        scale, shift = modulation(c, p["final.mod.weight"], p["final.mod.bias"], 2)
        out = linear(adaln(h, scale + 1.0, shift, cfg.ln_eps), p["final.out.weight"], p["final.out.bias"])
        if cfg.use_cls:
            out = out[:, 1:, :]
        img = unpatchify(out, cfg.image_h, cfg.image_w, cfg.channels, cfg.patch_size)
        return img if batched else img.reshape(img.shape[1:])

    __call__ = forward

    def features(self, x, t_feat: int = 1) -> np.ndarray:
        """Pooled final-block token state for clean images; see :func:`extract_features`."""
        if not self.frozen:
            raise FrozenError("features can only be extracted from a frozen encoder")
        cfg = self.config
        x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
        batched = x.ndim == 4
        if not batched:
            x = x[None]
        if x.shape[1:] != cfg.image_shape:
            raise ShapeError(f"expected image of shape {cfg.image_shape}, got {x.shape[1:]}")
        with no_grad():
            h, _ = self.encode(Tensor(x, dtype=np.float32), np.full(x.shape[0], t_feat))
        tok = h.data
        feat = tok[:, 0, :] if cfg.use_cls else tok.mean(axis=1)
        feat = np.ascontiguousarray(feat)
        return feat if batched else feat[0]


def dit_block(model: DiTModel, i: int, h: Tensor, c: Tensor) -> Tensor:
    return model.block(i, h, c)


def dit_forward(model: DiTModel, xt, t) -> Tensor:
    return model.forward(xt, t)


def condition_vector(model: DiTModel, t: int) -> Tensor:
    return model.condition(t)


def extract_features(model: DiTModel, x, t_feat: int = 1) -> np.ndarray:
    """Frozen-encoder feature vector(s) of clean image(s).

    The image is embedded without added noise, conditioned on ``t_feat``,
    and run through every block; the CLS token state (or the mean over
    patch tokens for mean pooling) is returned as a float32 array.
    """
    return model.features(x, t_feat)
