"""
The building blocks
===================

A tour of the tensor engine and the transformer pieces: gradients on a
small expression, a finite-difference check, and the fact that a freshly
built block passes its input through untouched.
"""

import numpy as np

from dfbp.tensor import Tensor, backward, float64_mode, grad_check
from dfbp.dit import DiTConfig, DiTModel, patchify, unpatchify
from dfbp.tensor import layer_norm, softmax

# a scalar loss built from a few ops; gradients land on the leaves
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = (layer_norm(x) * Tensor([0.5, -1.0, 2.0])).sum()
backward(loss)
print("d loss / dx =", x.grad)

# the same gradient, checked against central differences in float64
with float64_mode():
    y = Tensor([1.0, 2.0, 3.0])
    err = grad_check(lambda: (softmax(y) * Tensor([0.5, -1.0, 2.0])).sum(), y)
print(f"softmax grad_check relative error: {err:.2e}")

# patchify is a bijection between images and token sequences
img = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
tokens = patchify(Tensor(img), 2)
print("tokens:\n", tokens.data)
assert np.array_equal(unpatchify(tokens, 4, 4, 1, 2).data, img)

# adaLN-Zero: every block starts as the identity and the model outputs zeros
cfg = DiTConfig()
model = DiTModel(cfg, seed=0)
h = Tensor(np.random.default_rng(0).normal(size=(1, cfg.num_patches + 1, cfg.hidden_dim)))
c = model.condition(np.array([10]))
print("block(h) - h, max abs:", float(np.abs(model.block(0, h, c).data - h.data).max()))
print("fresh model output, max abs:", float(np.abs(model(np.zeros(cfg.image_shape), 10).data).max()))
print(f"{model.num_parameters()} parameters")
