"""Counter-based noise streams.

Every draw is a pure function of ``(seed, member, step)``: the Philox key
comes from ``(seed, member)`` and the counter from the step index, so an
ensemble member can be replayed from any step without touching the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def philox_key(seed: int, member: int = 0) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(member),))
    return ss.generate_state(2, dtype=np.uint64)


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    member: int = 0

    def generator(self, step: int, channel: int = 0) -> np.random.Generator:
        key = philox_key(self.seed, self.member)
        counter = np.array([0, 0, int(channel), int(step)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def increments(self, step: int, count: int, dt: float) -> np.ndarray:
        """Brownian increments ``dW_i ~ N(0, dt)`` for basis index ``i < count``."""
        return np.sqrt(dt) * self.generator(step).standard_normal(count)


def sampler_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for Monte Carlo work (chains, proposals)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(2**31 + int(stream),))
    return np.random.Generator(np.random.Philox(ss))
