"""Deterministic seed derivation.

One master seed is split into independent substreams so that, e.g., changing
the number of test-time samples never perturbs parameter initialization or
batch shuffling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SeedStreams:
    init_seed: int
    shuffle_seed: int
    sampler_seed: int
    eval_seed: int

    def sampler_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.sampler_seed)

    def eval_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.eval_seed)


def seed_streams(seed: int) -> SeedStreams:
    """Split ``seed`` into (init, shuffle, sampler, eval) substreams."""
    children = np.random.SeedSequence(seed).spawn(4)
    init, shuffle, sampler, ev = (int(c.generate_state(1)[0]) for c in children)
    return SeedStreams(init, shuffle, sampler, ev)
