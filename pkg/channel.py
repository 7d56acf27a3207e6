"""
channel.py - LOS channel construction and erroneous CSIT models
"""
from __future__ import annotations

import numpy as np

from config import ErrorConfig, ErrorModel, ScenarioConfig
from geometry import Placement, aod_cosines, pair_distances


def _antenna_factors(n_ants: int) -> np.ndarray:
    # (N + 1 - 2n) for n = 1..N
    n = np.arange(1, n_ants + 1)
    return n_ants + 1 - 2 * n


def _phase_profile(space_angle: np.ndarray, n_ants: int, d_a: float, wavelength: float) -> np.ndarray:
    # Trailing axis is the antenna index; no range check on the angle
    factors = _antenna_factors(n_ants)
    return np.exp(-1j * np.pi * (d_a / wavelength) * factors * np.asarray(space_angle)[..., None])


def steering_vector(cos_nu: float, n_ants: int, d_a: float, wavelength: float) -> np.ndarray:
    """
    ULA steering vector with entries exp(-jπ(d_a/λ)(N+1-2n)·cos ν).

    Raises:
        ValueError: If |cos ν| > 1 or n_ants < 1
    """
    if abs(cos_nu) > 1.0:
        raise ValueError(f"|cos_nu| must not exceed 1, got {cos_nu}")
    if n_ants < 1:
        raise ValueError(f"n_ants must be at least 1, got {n_ants}")
    return _phase_profile(cos_nu, n_ants, d_a, wavelength)


def amplitude_factor(d: np.ndarray | float, config: ScenarioConfig) -> np.ndarray | float:
    """Free-space amplitude λ√(G_Usr·G_Sat)/(4πd)."""
    return config.wavelength * np.sqrt(config.gain_usr * config.gain_sat) / (4.0 * np.pi * d)


def overall_phase(d: np.ndarray | float, wavelength: float) -> np.ndarray | float:
    """Propagation phase 2π·d/λ wrapped to [0, 2π)."""
    return 2.0 * np.pi * np.mod(np.asarray(d) / wavelength, 1.0)


def channel_vector(d: float, phi: float, cos_nu: float, config: ScenarioConfig) -> np.ndarray:
    """
    Channel from one satellite's ULA to one user.

    Raises:
        ValueError: If d is not strictly positive
    """
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    steering = steering_vector(cos_nu, config.ants_per_sat, config.inter_ant_distance, config.wavelength)
    return amplitude_factor(d, config) * np.exp(-1j * phi) * steering


def build_true_channel(placement: Placement, config: ScenarioConfig) -> np.ndarray:
    """
    Assemble the K×MN channel matrix; row k is [h_k1 ... h_kM].

    Args:
        placement: Satellite and user coordinates
        config: Scenario parameters

    Returns:
        np.ndarray: Complex channel matrix H
    """
    distances = pair_distances(placement)
    cosines = aod_cosines(placement)

    gains = amplitude_factor(distances, config) * np.exp(-1j * overall_phase(distances, config.wavelength))
    steering = _phase_profile(cosines, config.ants_per_sat, config.inter_ant_distance, config.wavelength)

    blocks = gains[:, :, None] * steering
    return blocks.reshape(placement.num_users, -1)


def apply_error_model_1(
    H: np.ndarray,
    delta_epsilon: float,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Erroneous CSIT from a uniform additive error on each pair's space angle.

    One ε ~ U(-Δε, +Δε) is drawn per (user, satellite) pair; the block is
    multiplied entrywise by the unit-modulus error vector v(ε).
    """
    if delta_epsilon < 0:
        raise ValueError(f"delta_epsilon must be non-negative, got {delta_epsilon}")
    k = H.shape[0]
    m = config.num_sats
    eps = rng.uniform(-delta_epsilon, delta_epsilon, size=(k, m))
    errors = _phase_profile(eps, config.ants_per_sat, config.inter_ant_distance, config.wavelength)
    return H * errors.reshape(H.shape)


def apply_error_model_2(
    H: np.ndarray,
    delta_epsilon: float,
    sigma_zeta: float,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Erroneous CSIT with imperfect position knowledge and satellite synchronization.

    Applies error model 1, then one Gaussian phase offset ζ ~ N(0, σ_ζ²) per
    (user, satellite) pair, shared by the pair's N antennas.
    """
    if sigma_zeta < 0:
        raise ValueError(f"sigma_zeta must be non-negative, got {sigma_zeta}")
    H_tilde = apply_error_model_1(H, delta_epsilon, config, rng)
    k = H.shape[0]
    zeta = rng.normal(0.0, sigma_zeta, size=(k, config.num_sats))
    offsets = np.repeat(np.exp(-1j * zeta), config.ants_per_sat, axis=1)
    return H_tilde * offsets


def apply_error(
    H: np.ndarray,
    error: ErrorConfig,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Erroneous CSIT according to the configured error model."""
    if error.model is ErrorModel.MODEL1:
        return apply_error_model_1(H, error.delta_epsilon, config, rng)
    if error.model is ErrorModel.MODEL2:
        return apply_error_model_2(H, error.delta_epsilon, error.sigma_zeta, config, rng)
    return H.copy()
