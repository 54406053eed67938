"""Finite-difference gradient checks over every differentiable piece of the model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import build_schedule, denoise_loss
from .dit import DiTConfig, DiTModel, multi_head_attention
from .head import RegressionHead
from .rng import DiffusionRng
from .tensor import Tensor, float64_mode, gelu, grad_check, layer_norm, matmul, mse, softmax

TOLERANCE = 1e-4

# parameter-name prefixes that make up each group of the denoiser
PARAM_GROUPS = {
    "embed": ("embed.", "pos", "cls"),
    "timestep_mlp": ("t_mlp.",),
    "adaln_modulation": (".mod.",),
    "attention": (".qkv.", ".proj."),
    "ffn": (".fc1.", ".fc2."),
    "final_projection": ("final.out.",),
}


@dataclass
class CheckResult:
    name: str
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def group_of(name: str) -> str:
    for group, keys in PARAM_GROUPS.items():
        if any(name.startswith(k) if not k.startswith(".") else k in name for k in keys):
            return group
    raise KeyError(name)


def _rand(rng: DiffusionRng, *shape) -> Tensor:
    return Tensor(rng.normal(shape, dtype=np.float64))


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = DiffusionRng(seed)
    out = []
    with float64_mode():
        a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
        w = _rand(rng, 3, 5)
        out.append(CheckResult("matmul", grad_check(lambda: (matmul(a, b) * w).sum(), [a, b])))
        x, w = _rand(rng, 4, 8), _rand(rng, 4, 8)
        out.append(CheckResult("layer_norm", grad_check(lambda: (layer_norm(x) * w).sum(), x)))
        out.append(CheckResult("softmax", grad_check(lambda: (softmax(x) * w).sum(), x)))
        out.append(CheckResult("gelu", grad_check(lambda: (gelu(x) * w).sum(), x)))
        # keep relu inputs away from the kink
        xr = Tensor(np.where(np.abs(x.data) < 0.1, 0.5, x.data))
        out.append(CheckResult("relu", grad_check(lambda: (xr.relu() * w).sum(), xr)))
        h = _rand(rng, 2, 5, 8)
        ws = [_rand(rng, 8, 24) * 0.3, _rand(rng, 24) * 0.1, _rand(rng, 8, 8) * 0.3, _rand(rng, 8) * 0.1]
        ws = [Tensor(t.data) for t in ws]
        tgt = _rand(rng, 2, 5, 8)
        out.append(CheckResult(
            "attention",
            grad_check(lambda: mse(multi_head_attention(h, *ws, num_heads=2), tgt), [h, *ws]),
        ))
    return out


def denoiser_check(cfg: DiTConfig, seed: int = 0, T: int = 50, batch: int = 2,
                   max_coords: int | None = None) -> dict[str, float]:
    """Max relative error of d(denoise loss)/d(params), per parameter group.

    The model is re-randomised away from the adaLN-Zero point so that every
    group has non-zero gradients.
    """
    model = DiTModel(cfg, seed=seed).randomize_(seed + 1, std=0.3).to(np.float64)
    sched = build_schedule(T, 0.002, 0.4)
    x0 = DiffusionRng(seed + 2).normal((batch,) + cfg.image_shape, dtype=np.float64)
    t = np.arange(1, batch + 1) * (T // (batch + 1))
    t = np.maximum(t, 1)

    def loss():
        return denoise_loss(model, x0, t, DiffusionRng(seed + 3), sched)

    errors: dict[str, float] = {}
    with float64_mode():
        for name, p in model.params.items():
            err = grad_check(loss, [p], max_coords=max_coords, seed=seed)
            g = group_of(name)
            errors[g] = max(errors.get(g, 0.0), err)
    return errors


def head_check(dim: int = 16, seed: int = 0) -> float:
    head = RegressionHead(dim, seed=seed, init_std=0.5)
    rng = DiffusionRng(seed + 1)
    feats = Tensor(rng.normal((6, dim), dtype=np.float64))
    y = Tensor(rng.normal(6, dtype=np.float64) + 3.0)
    for p in head.params.values():
        p.data = p.data.astype(np.float64)
    with float64_mode():
        return grad_check(lambda: mse(head.forward(feats), y), list(head.params.values()))


def run_suite(cfg: DiTConfig | None = None, seed: int = 0,
              max_coords: int | None = None) -> list[CheckResult]:
    """Every check; the default model is depth 2, D=16, P=2 on 8x8x1 images."""
    cfg = cfg or DiTConfig(image_h=8, image_w=8, channels=1, patch_size=2, hidden_dim=16,
                           depth=2, num_heads=2, mlp_ratio=4, T=50)
    results = op_checks(seed)
    for group, err in denoiser_check(cfg, seed, T=min(cfg.T, 50), max_coords=max_coords).items():
        results.append(CheckResult(f"denoise_loss/{group}", err))
    results.append(CheckResult("regression_head", head_check(seed=seed)))
    return results
