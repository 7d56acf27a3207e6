"""
precoding.py - MMSE and MRT/OMA baselines, per-satellite power cap, sum rate
"""
from __future__ import annotations

import numpy as np


def sum_rate(H: np.ndarray, W: np.ndarray, noise_power: float) -> float:
    """
    Sum rate Σ_k log(1 + SINR_k) in nats.

    Args:
        H: K×MN channel matrix
        W: MN×K precoding matrix, column k serves user k
        noise_power: σ_n² in watts

    Returns:
        float: Sum rate, always >= 0
    """
    if H.shape[1] != W.shape[0] or H.shape[0] != W.shape[1]:
        raise ValueError(f"incompatible shapes H{H.shape} and W{W.shape}")
    gains = np.abs(H @ W) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return float(np.sum(np.log1p(signal / (noise_power + interference))))


def per_satellite_power(W: np.ndarray, num_sats: int) -> np.ndarray:
    """Frobenius power of each satellite's row block of W."""
    blocks = W.reshape(num_sats, -1, W.shape[1])
    return np.sum(np.abs(blocks) ** 2, axis=(1, 2))


def enforce_per_satellite_power(W: np.ndarray, total_power: float, num_sats: int) -> np.ndarray:
    """
    Rescale W by one positive scalar so the most loaded satellite uses exactly P/M.

    Beam directions and the power ratios between satellites are unchanged.

    Raises:
        ValueError: If W is all-zero
    """
    if W.shape[0] % num_sats:
        raise ValueError(f"{W.shape[0]} precoder rows do not split over {num_sats} satellites")
    peak = per_satellite_power(W, num_sats).max()
    if peak == 0.0:
        raise ValueError("cannot normalize an all-zero precoder")
    return W * np.sqrt(total_power / num_sats / peak)


def trace_normalized_mmse(H_tilde: np.ndarray, total_power: float, noise_power: float, num_users: int) -> np.ndarray:
    """
    Regularized channel inversion scaled to total power P.

    W' = (H̃ᴴH̃ + σ_n²·K/P·I)⁻¹ H̃ᴴ, then W = √(P / tr(W'ᴴW'))·W'.

    Raises:
        RuntimeError: If the regularized Gram matrix is numerically singular
    """
    H_herm = H_tilde.conj().T
    gram = H_herm @ H_tilde
    regularizer = noise_power * num_users / total_power
    try:
        W_prime = np.linalg.solve(gram + regularizer * np.eye(gram.shape[0]), H_herm)
    except np.linalg.LinAlgError as e:
        raise RuntimeError(f"MMSE Gram matrix is singular: {e}") from e
    scale = np.sqrt(total_power / np.real(np.trace(W_prime.conj().T @ W_prime)))
    return scale * W_prime


def mmse_precoder(
    H_tilde: np.ndarray,
    total_power: float,
    noise_power: float,
    num_users: int,
    num_sats: int,
) -> np.ndarray:
    """MMSE precoder under the per-satellite power constraint P/M."""
    W = trace_normalized_mmse(H_tilde, total_power, noise_power, num_users)
    return enforce_per_satellite_power(W, total_power, num_sats)


def mrt_precoder(h_tilde: np.ndarray, total_power: float) -> np.ndarray:
    """
    Maximum ratio transmission beam √P·h̃ᴴ/‖h̃‖ for one user.

    Raises:
        ValueError: If the channel is zero
    """
    norm = np.linalg.norm(h_tilde)
    if norm == 0.0:
        raise ValueError("cannot steer towards a zero channel")
    return np.sqrt(total_power) * h_tilde.conj() / norm


def oma_sum_rate(H: np.ndarray, H_tilde: np.ndarray, total_power: float, noise_power: float) -> float:
    """
    Orthogonal multiple access rate (1/K)·Σ_k log(1 + |h_k w_k|²/σ_n²).

    Beams are built from the erroneous CSIT H̃, rates evaluated on the true H.
    """
    if H.shape != H_tilde.shape:
        raise ValueError(f"shape mismatch: H{H.shape} vs H_tilde{H_tilde.shape}")
    num_users = H.shape[0]
    rates = [
        np.log1p(np.abs(H[k] @ mrt_precoder(H_tilde[k], total_power)) ** 2 / noise_power)
        for k in range(num_users)
    ]
    return float(np.sum(rates) / num_users)
