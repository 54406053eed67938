"""Denoising pre-training loop, freezing and checkpoint persistence."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .diffusion import NoiseSchedule, build_schedule, denoise_loss, sample_timestep
from .dit import DiTConfig, DiTModel
from .optim import AdamWState, adamw_step
from .rng import DiffusionRng, derive_seed
from .tensor import backward

logger = logging.getLogger(__name__)

_SHUFFLE_STREAM = 0x5EED
_NOISE_STREAM = 0xD1FF


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def build(self) -> NoiseSchedule:
        return build_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class Checkpoint:
    model: DiTConfig
    params: dict[str, np.ndarray]
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: AdamWState | None = None
    rng_state: dict | None = None
    step: int = 0
    seed: int = 0
    batch: int = 8
    extra: dict = field(default_factory=dict)

    def build_model(self) -> DiTModel:
        m = DiTModel(self.model, seed=self.seed)
        m.load_arrays(self.params)
        return m


def freeze(model: DiTModel) -> None:
    """Exclude every encoder parameter from the tape and from optimisers. Idempotent."""
    model.freeze()


class PretrainRun:
    """Stateful denoising pre-training over an in-memory image stack.

    Batches are consecutive slices of a per-epoch seeded permutation, so the
    data order is a function of (seed, step) alone; noise and timesteps come
    from a single checkpointed stream.
    """

    def __init__(self, images: np.ndarray, model: DiTModel, schedule: ScheduleConfig,
                 optim: AdamWState, seed: int, batch: int, rng: DiffusionRng | None = None,
                 step: int = 0):
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[0] == 0:
            raise ValueError("pre-training needs a non-empty (n, H, W, C) image stack")
        if images.shape[1:] != model.config.image_shape:
            raise ValueError(
                f"image shape {images.shape[1:]} does not match model config "
                f"{model.config.image_shape}"
            )
        if schedule.T > model.config.T:
            raise ValueError(f"schedule T={schedule.T} exceeds model embedding range {model.config.T}")
        self.images = images
        self.model = model
        self.schedule_cfg = schedule
        self.schedule = schedule.build()
        self.optim = optim
        self.seed = seed
        self.batch = batch
        self.rng = rng or DiffusionRng(derive_seed(seed, _NOISE_STREAM))
        self.step = step
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: DiffusionRng.from_labels(self.seed, _SHUFFLE_STREAM, epoch)
                           .permutation(len(self.images))}
        return self._perms[epoch]

    def batch_indices(self, step: int) -> np.ndarray:
        n = len(self.images)
        out = np.empty(self.batch, dtype=np.int64)
        for j in range(self.batch):
            pos = step * self.batch + j
            out[j] = self._perm(pos // n)[pos % n]
        return out

    def train_step(self) -> float:
        x0 = self.images[self.batch_indices(self.step)]
        t = sample_timestep(self.rng, self.schedule.T, size=len(x0))
        loss = denoise_loss(self.model, x0, t, self.rng, self.schedule)
        backward(loss)
        adamw_step(self.model.params, self.optim)
        self.step += 1
        return float(loss.data)

    def run(self, steps: int, log_every: int = 0) -> list[tuple[int, float]]:
        trace = []
        for _ in range(steps):
            s = self.step
            loss = self.train_step()
            trace.append((s, loss))
            if log_every and s % log_every == 0:
                logger.info("step %d loss %.5f", s, loss)
        return trace

    def checkpoint(self, extra: dict | None = None) -> Checkpoint:
        return Checkpoint(
            model=self.model.config,
            params={k: v.data.copy() for k, v in self.model.params.items()},
            schedule=self.schedule_cfg,
            optim=_copy_optim(self.optim),
            rng_state=self.rng.get_state(),
            step=self.step,
            seed=self.seed,
            batch=self.batch,
            extra=dict(extra or {}),
        )

    @classmethod
    def resume(cls, ckpt: Checkpoint, images: np.ndarray) -> "PretrainRun":
        model = ckpt.build_model()
        optim = _copy_optim(ckpt.optim) if ckpt.optim else AdamWState()
        rng = DiffusionRng.from_state(ckpt.rng_state) if ckpt.rng_state else None
        return cls(images, model, ckpt.schedule, optim, ckpt.seed, ckpt.batch, rng, ckpt.step)


def _copy_optim(st: AdamWState) -> AdamWState:
    return AdamWState(
        lr=st.lr, beta1=st.beta1, beta2=st.beta2, eps=st.eps, weight_decay=st.weight_decay,
        step=st.step, m={k: v.copy() for k, v in st.m.items()},
        v={k: v.copy() for k, v in st.v.items()},
    )


def pretrain(
    images: np.ndarray,
    model_cfg: DiTConfig,
    schedule: ScheduleConfig | None = None,
    optim: OptimConfig | None = None,
    steps: int = 500,
    batch: int = 8,
    seed: int = 0,
    log_every: int = 0,
) -> tuple[Checkpoint, list[tuple[int, float]]]:
    """Minimise the noise-prediction loss with AdamW; returns (checkpoint, loss trace)."""
    schedule = schedule or ScheduleConfig(T=model_cfg.T)
    optim = optim or OptimConfig()
    model = DiTModel(model_cfg, seed=seed)
    state = AdamWState(lr=optim.lr, beta1=optim.beta1, beta2=optim.beta2, eps=optim.eps,
                       weight_decay=optim.weight_decay)
    run = PretrainRun(images, model, schedule, state, seed, batch)
    trace = run.run(steps, log_every)
    return run.checkpoint(), trace


def smoothed(trace, window: int = 50) -> np.ndarray:
    """Trailing moving average of the loss column (shorter at the start)."""
    vals = np.array([v for _, v in trace], dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(vals)])
    idx = np.arange(1, len(vals) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def write_loss_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for s, v in trace:
            w.writerow([s, repr(float(v))])


# ---------------------------------------------------------------------------
# checkpoint files


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "kind": "dit-checkpoint",
        "model": ckpt.model.to_dict(),
        "schedule": {"T": ckpt.schedule.T, "beta_start": ckpt.schedule.beta_start,
                     "beta_end": ckpt.schedule.beta_end},
        "step": ckpt.step,
        "seed": ckpt.seed,
        "batch": ckpt.batch,
        "rng": ckpt.rng_state,
        "optim": None,
        "extra": ckpt.extra,
    }
    tensors = {f"param/{k}": v for k, v in ckpt.params.items()}
    if ckpt.optim is not None:
        header["optim"] = {**ckpt.optim.hyper(), "step": ckpt.optim.step}
        for k in ckpt.params:
            if k in ckpt.optim.m:
                tensors[f"adam_m/{k}"] = ckpt.optim.m[k]
                tensors[f"adam_v/{k}"] = ckpt.optim.v[k]
    return container.dumps(header, tensors)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    header, tensors = container.loads(data)
    if header.get("kind") != "dit-checkpoint":
        raise container.ContainerError(f"not a DiT checkpoint (kind={header.get('kind')!r})")
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    optim = None
    if header.get("optim") is not None:
        o = header["optim"]
        optim = AdamWState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                           weight_decay=o["weight_decay"], step=o["step"])
        for k, v in tensors.items():
            if k.startswith("adam_m/"):
                optim.m[k[7:]] = v
            elif k.startswith("adam_v/"):
                optim.v[k[7:]] = v
    return Checkpoint(
        model=DiTConfig.from_dict(header["model"]),
        params=params,
        schedule=ScheduleConfig(**header["schedule"]),
        optim=optim,
        rng_state=header.get("rng"),
        step=header["step"],
        seed=header["seed"],
        batch=header["batch"],
        extra=header.get("extra") or {},
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
