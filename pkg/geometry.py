"""
geometry.py - Satellite and user placement in the along-track/altitude plane
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from config import ScenarioConfig


@dataclass(frozen=True)
class Placement:
    """Coordinates in meters; x is along-track, z is altitude"""

    sat_x: np.ndarray
    sat_z: np.ndarray
    user_x: np.ndarray
    user_z: np.ndarray

    @property
    def num_sats(self) -> int:
        return self.sat_x.shape[0]

    @property
    def num_users(self) -> int:
        return self.user_x.shape[0]


def place_constellation(config: ScenarioConfig, jitter_bound: float, rng: np.random.Generator) -> Placement:
    """
    Place satellites symmetrically about x=0 at altitude and users on the ground.

    Users sit at (k - (K-1)/2)·D̄_Usr plus an independent uniform draw in
    [-jitter_bound, +jitter_bound]. The draw is consumed even for a zero bound,
    so the stream advances identically in every call.

    Args:
        config: Scenario parameters
        jitter_bound: Half-width of the per-user position jitter in meters
        rng: Random stream owned by the caller

    Returns:
        Placement: Satellite and user coordinates

    Raises:
        ValueError: If jitter_bound is negative
    """
    if jitter_bound < 0:
        raise ValueError(f"jitter_bound must be non-negative, got {jitter_bound}")

    m = config.num_sats
    k = config.num_users

    sat_x = (np.arange(m) - (m - 1) / 2.0) * config.inter_sat_distance
    sat_z = np.full(m, config.sat_altitude)

    nominal = (np.arange(k) - (k - 1) / 2.0) * config.mean_user_distance
    user_x = nominal + rng.uniform(-jitter_bound, jitter_bound, size=k)
    user_z = np.zeros(k)

    return Placement(sat_x=sat_x, sat_z=sat_z, user_x=user_x, user_z=user_z)


def _offsets(placement: Placement) -> tuple[np.ndarray, np.ndarray]:
    dx = placement.user_x[:, None] - placement.sat_x[None, :]
    dz = placement.user_z[:, None] - placement.sat_z[None, :]
    return dx, dz


def pair_distances(placement: Placement) -> np.ndarray:
    """Euclidean distance per (user, satellite) pair, shape K×M."""
    dx, dz = _offsets(placement)
    return np.hypot(dx, dz)


def aod_cosines(placement: Placement) -> np.ndarray:
    """Space angle cos ν per (user, satellite) pair, shape K×M; ULA axis along x."""
    dx, dz = _offsets(placement)
    return dx / np.hypot(dx, dz)
