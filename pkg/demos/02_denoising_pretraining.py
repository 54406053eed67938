"""
Denoising pre-training on synthetic faces
=========================================

Render a small unlabeled corpus, train the noise predictor for a few
hundred steps, and draw a sample from the reverse chain.
"""

import numpy as np

from dfbp.data import generate_synthetic_corpus, stack_images, write_pgm
from dfbp.diffusion import ancestral_sample
from dfbp.dit import DiTConfig
from dfbp.rng import DiffusionRng
from dfbp.training import OptimConfig, ScheduleConfig, pretrain, smoothed

images = stack_images(generate_synthetic_corpus(64, 16, seed=1, labeled=False))
print("corpus", images.shape, "pixel range", images.min(), images.max())

# T=100 with the beta range stretched so the chain still ends near pure noise
sched = ScheduleConfig(T=100, beta_start=0.001, beta_end=0.2)
s = sched.build()
print(f"alpha_bar at T: {s.alpha_bars[-1]:.2e}")

ckpt, trace = pretrain(images, DiTConfig(T=100), sched, OptimConfig(lr=1e-3),
                       steps=300, batch=16, seed=0)
sm = smoothed(trace, 50)
for step in (0, 49, 149, 299):
    print(f"step {step:4d}  smoothed loss {sm[step]:.4f}")

model = ckpt.build_model()
model.freeze()
img = ancestral_sample(model, s, DiffusionRng(0))
write_pgm("demo_sample.pgm", img)
print("wrote demo_sample.pgm; sample mean/std", float(np.mean(img)), float(np.std(img)))
