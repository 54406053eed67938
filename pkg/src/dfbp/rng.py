"""Seeded, platform-independent random streams.

Streams are Philox (counter-based) bit generators whose 128-bit key is
expanded from a 64-bit seed with SplitMix64. Gaussian draws use the
Box-Muller transform on the stream's float64 uniforms, so a given seed gives
the same normals on every platform and numpy version that keeps Philox
stable.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (next_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def derive_seed(seed: int, *labels: int) -> int:
    """Mix integer labels into a seed to get an independent 64-bit seed."""
    state = seed & MASK64
    for lab in labels:
        state, out = splitmix64(state ^ (lab & MASK64))
        state = out
    _, out = splitmix64(state)
    return out


class DiffusionRng:
    """Deterministic random stream for noise, timesteps and shuffles."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        s, k0 = splitmix64(self.seed)
        _, k1 = splitmix64(s)
        self._bitgen = np.random.Philox(key=np.array([k0, k1], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)

    @classmethod
    def from_labels(cls, seed: int, *labels: int) -> "DiffusionRng":
        return cls(derive_seed(seed, *labels))

    def uniform(self, size=None) -> np.ndarray:
        """Float64 uniforms on [0, 1)."""
        return self._gen.random(size)

    def normal(self, shape, dtype=np.float32) -> np.ndarray:
        """Standard normals via Box-Muller, cast to ``dtype``."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self._gen.random((2, pairs))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u in (0, 1]
        theta = 2.0 * np.pi * u[1]
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape).astype(dtype)

    def integers(self, low: int, high: int, size=None) -> np.ndarray | int:
        """Uniform integers on [low, high)."""
        out = self._gen.integers(low, high, size=size)
        return int(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    # -- persistence ------------------------------------------------------

    def get_state(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    @classmethod
    def from_state(cls, state: dict) -> "DiffusionRng":
        rng = cls(state["seed"])
        rng.set_state(state)
        return rng
