"""
seeding.py - Split one master seed into independent, named random streams
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STREAM_NAMES = ("placement", "errors", "init", "action", "buffer")


@dataclass
class RandomStreams:
    """One independent generator per random concern of a training run"""

    placement: np.random.Generator
    errors: np.random.Generator
    init: np.random.Generator
    action: np.random.Generator
    buffer: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RandomStreams":
        children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
        generators = {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, children)}
        return cls(**generators)


def iteration_seeds(seed: int, num_points: int, iterations: int) -> list[list[np.random.SeedSequence]]:
    """
    Pre-assign one seed sequence per (grid point, Monte Carlo iteration).

    The assignment depends only on the master seed, so any split of the
    iterations across workers reproduces the serial result.
    """
    # Offset keeps evaluation streams disjoint from the training streams of the same seed
    root = np.random.SeedSequence([seed, len(STREAM_NAMES)])
    return [point.spawn(iterations) for point in root.spawn(num_points)]
