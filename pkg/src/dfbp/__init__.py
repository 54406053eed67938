"""Denoising-diffusion pre-training of a Diffusion Transformer, reused as a
frozen feature extractor for score regression."""

from .diffusion import (
    NoiseSchedule,
    ancestral_sample,
    build_schedule,
    denoise_loss,
    forward_sample,
    sample_timestep,
)
from .dit import (
    ConfigError,
    DiTConfig,
    DiTModel,
    FrozenError,
    adaln,
    condition_vector,
    dit_block,
    dit_forward,
    extract_features,
    patchify,
    sinusoidal_embedding,
    unpatchify,
)
from .head import HeadConfig, RegressionHead, finetune_head, head_forward, predict
from .metrics import (
    DegenerateInputError,
    EvalReport,
    FoldSplit,
    cross_validate,
    kfold_split,
    mae,
    pcc,
    run_ablation,
)
from .optim import AdamW, AdamWState, adamw_step
from .rng import DiffusionRng
from .tensor import Tensor, backward, grad_check, no_grad
from .training import (
    Checkpoint,
    OptimConfig,
    PretrainRun,
    ScheduleConfig,
    freeze,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)

__version__ = "0.1.0"
