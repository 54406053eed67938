"""DDPM forward process, the noise-prediction objective and a reverse sampler.

Timesteps are 1-based: ``t`` ranges over ``1..T`` and indexes the schedule
arrays at ``t - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import DiffusionRng
from .tensor import ShapeError, Tensor, mse, no_grad


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def check_t(self, t) -> np.ndarray:
        arr = np.asarray(t)
        if arr.size == 0 or arr.min() < 1 or arr.max() > self.T:
            raise ScheduleError(f"timestep out of range 1..{self.T}: {t}")
        return arr.astype(np.int64)


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule, both endpoints included."""
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    T = int(T)
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(T, betas, alphas, np.cumprod(alphas))


def _coefs(s: NoiseSchedule, t, ndim: int, dtype):
    idx = s.check_t(t) - 1
    ab = s.alpha_bars[idx]
    a = np.sqrt(ab).astype(dtype)
    b = np.sqrt(1.0 - ab).astype(dtype)
    if a.ndim == 1:
        # one timestep per batch row
        a = a.reshape((-1,) + (1,) * (ndim - 1))
        b = b.reshape((-1,) + (1,) * (ndim - 1))
    return a, b


def forward_sample(x0, t, eps, s: NoiseSchedule) -> Tensor:
    """Closed-form corruption sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` is an int or one timestep per leading batch row. The result is
    a plain (untaped) tensor.
    """
    x0 = x0.data if isinstance(x0, Tensor) else np.asarray(x0)
    eps = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    a, b = _coefs(s, t, x0.ndim, x0.dtype)
    return Tensor(a * x0 + b * eps, dtype=x0.dtype)


def sample_timestep(rng: DiffusionRng, T: int, size=None):
    """Uniform draw from {1, ..., T}."""
    return rng.integers(1, T + 1, size=size)


def denoise_loss(model, x0, t, rng: DiffusionRng, s: NoiseSchedule) -> Tensor:
    """Mean squared error between drawn noise and the model's prediction.

    ``model(x_t, t)`` must return a tensor shaped like ``x0``.
    """
    x0 = x0.data if isinstance(x0, Tensor) else np.asarray(x0)
    eps = rng.normal(x0.shape, dtype=x0.dtype)
    xt = forward_sample(x0, t, eps, s)
    pred = model(xt, t)
    if pred.shape != x0.shape:
        raise ShapeError(f"model output {pred.shape} does not match input {x0.shape}")
    return mse(pred, Tensor(eps, dtype=x0.dtype))


def ancestral_sample(
    model,
    s: NoiseSchedule,
    rng: DiffusionRng,
    steps: int | None = None,
    shape: tuple[int, ...] | None = None,
    x_init=None,
) -> np.ndarray:
    """Run the DDPM reverse chain from pure noise and return x_0.

    Uses sigma_t^2 = beta_t and no noise on the final step. With
    ``steps < T`` the chain starts at ``t = steps``. ``shape`` defaults to a
    single image of the model's configured size; ``x_init`` overrides the
    starting noise draw.
    """
    steps = s.T if steps is None else int(steps)
    if not 1 <= steps <= s.T:
        raise ScheduleError(f"steps must be in 1..{s.T}, got {steps}")
    if shape is None:
        cfg = model.config
        shape = (cfg.image_h, cfg.image_w, cfg.channels)
    x = rng.normal(shape, dtype=np.float32) if x_init is None else np.array(x_init, copy=True)
    with no_grad():
        for t in range(steps, 0, -1):
            i = t - 1
            eps = model(Tensor(x, dtype=x.dtype), t).data
            coef = s.betas[i] / np.sqrt(1.0 - s.alpha_bars[i])
            mean = (x - coef * eps) / np.sqrt(s.alphas[i])
            if t > 1:
                mean = mean + np.sqrt(s.betas[i]) * rng.normal(shape, dtype=x.dtype)
            x = mean.astype(x.dtype)
    return x
