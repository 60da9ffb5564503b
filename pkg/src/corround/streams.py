"""Seeded random streams used by every stochastic component.

All randomness flows through :class:`RandomStream`, which hands out uniforms
on (0, 1] from a PCG64 generator and derives everything else from them by
inverse CDF. Keeping the draw primitives this explicit has two payoffs:
exponential sampling via -ln(U)/rate never sees ln(0), and batched consumers
(the Monte Carlo estimator) see bit-for-bit the same sequence as one-at-a-time
consumers, which the tests rely on.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def derive_seed(base: int, index: int) -> int:
    """Derive a child seed as base XOR index (both reduced mod 2**64)."""
    return (int(base) ^ int(index)) & _MASK64


class RandomStream:
    """Deterministic source of uniform, exponential, and Bernoulli draws.

    Identical seeds produce identical draw sequences. ``position`` counts the
    uniforms consumed so far, so two streams can be checked for lockstep.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.position = 0

    def derive(self, index: int) -> "RandomStream":
        """Independent child stream (seed XOR index); self is untouched."""
        return RandomStream(derive_seed(self.seed, index))

    def uniform(self, size=None):
        """Uniform draws on (0, 1]."""
        if size is None:
            self.position += 1
            return 1.0 - self._gen.random()
        u = 1.0 - self._gen.random(size)
        self.position += int(u.size)
        return u

    def exponential(self, rate, size=None):
        """Exponential draws via E = -ln(U)/rate.

        ``rate`` may be a scalar or an array broadcast against ``size``.
        A zero rate yields +inf (the event never happens).
        """
        u = self.uniform(size if size is not None else np.shape(rate) or None)
        with np.errstate(divide="ignore"):
            return -np.log(u) / rate

    def bernoulli(self, p, size=None):
        """Bernoulli draws: True with probability exactly p (U <= p)."""
        return self.uniform(size) <= p

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, position={self.position})"
