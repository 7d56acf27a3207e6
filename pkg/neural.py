"""
neural.py - Dense networks with exact reverse-mode gradients, Gaussian policy head, Adam

Networks operate on batches: inputs have shape (B, in), outputs (B, out).
A single 1-D input is treated as a batch of one and returned 1-D.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class DivergenceError(ArithmeticError):
    """Raised when a loss or gradient becomes non-finite"""


class Activation(enum.Enum):
    """Hidden layer activation"""
    RELU = "relu"
    LINEAR = "linear"


@dataclass
class DenseNetworkParams:
    """Per-layer weights (out×in) and biases; the output layer is linear"""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[1]} does not chain")

    @classmethod
    def initialize(
        cls,
        layer_sizes: list[int],
        rng: np.random.Generator,
        activation: Activation = Activation.RELU,
    ) -> "DenseNetworkParams":
        """Uniform ±√(6/(fan_in+fan_out)) weights, zero biases."""
        weights = []
        biases = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, activation=activation)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        """Parameter arrays in flat-layout order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_tensors(cls, tensors: list[np.ndarray], activation: Activation = Activation.RELU) -> "DenseNetworkParams":
        return cls(weights=list(tensors[0::2]), biases=list(tensors[1::2]), activation=activation)

    def zeros_like(self) -> "DenseNetworkParams":
        return DenseNetworkParams.from_tensors([np.zeros_like(t) for t in self.tensors()], self.activation)

    def copy(self) -> "DenseNetworkParams":
        return DenseNetworkParams.from_tensors([t.copy() for t in self.tensors()], self.activation)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


def _as_batch(inputs: np.ndarray, expected: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != expected:
        raise ValueError(f"input shape {np.shape(inputs)} does not match first layer size {expected}")
    return x, single


def forward_with_cache(params: DenseNetworkParams, inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning the output and the pre-activations of every layer."""
    x, single = _as_batch(inputs, params.layer_sizes[0])
    pre_activations = []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre_activations.append(z)
        a = z if i == last else _activate(z, params.activation)
    return (a[0] if single else a), pre_activations


def forward(params: DenseNetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Affine-activation chain; the last layer is linear."""
    return forward_with_cache(params, inputs)[0]


def backward(
    params: DenseNetworkParams,
    inputs: np.ndarray,
    upstream: np.ndarray,
    pre_activations: Optional[list[np.ndarray]] = None,
) -> tuple[DenseNetworkParams, np.ndarray]:
    """
    Exact gradients of Σ output·upstream with respect to parameters and inputs.

    Args:
        params: Network parameters
        inputs: Batch of inputs, shape (B, in) or (in,)
        upstream: Gradient with respect to the output, same batch layout
        pre_activations: Cache from forward_with_cache; recomputed if omitted

    Returns:
        tuple: (parameter gradients summed over the batch, input gradient)
    """
    x, single = _as_batch(inputs, params.layer_sizes[0])
    g = np.asarray(upstream, dtype=float)
    if single:
        g = g[None, :]
    if g.shape != (x.shape[0], params.layer_sizes[-1]):
        raise ValueError(f"upstream shape {np.shape(upstream)} does not match output")
    if pre_activations is None:
        _, pre_activations = forward_with_cache(params, x)

    weight_grads: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        if i == 0:
            layer_input = x
        else:
            layer_input = _activate(pre_activations[i - 1], params.activation)
        weight_grads[i] = g.T @ layer_input
        bias_grads[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            g = g * _activation_grad(pre_activations[i - 1], params.activation)

    grads = DenseNetworkParams(weights=weight_grads, biases=bias_grads, activation=params.activation)
    return grads, (g[0] if single else g)


@dataclass
class GaussianPolicyOutput:
    """Diagonal Gaussian with means and clamped scales"""

    mean: np.ndarray
    log_std: np.ndarray
    # 1 where the raw log-scale was inside the clamp range, else 0
    log_std_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.log_std_mask is None:
            self.log_std_mask = np.ones_like(self.log_std)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @classmethod
    def from_network_output(cls, raw: np.ndarray) -> "GaussianPolicyOutput":
        """Split raw output into means (first half) and log-scales (second half)."""
        dim = raw.shape[-1] // 2
        if raw.shape[-1] != 2 * dim:
            raise ValueError(f"policy output size {raw.shape[-1]} is not even")
        raw_log_std = raw[..., dim:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        mask = ((raw_log_std >= LOG_STD_MIN) & (raw_log_std <= LOG_STD_MAX)).astype(float)
        return cls(mean=raw[..., :dim], log_std=log_std, log_std_mask=mask)


def sample_action(policy: GaussianPolicyOutput, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Reparametrized draw a = μ + σ·z; returns (action, z)."""
    noise = rng.standard_normal(policy.mean.shape)
    return policy.mean + policy.std * noise, noise


def log_prob(policy: GaussianPolicyOutput, action: np.ndarray) -> np.ndarray:
    """Per-dimension Gaussian log densities, no squashing correction."""
    if np.shape(action) != policy.mean.shape:
        raise ValueError(f"action shape {np.shape(action)} does not match policy {policy.mean.shape}")
    z = (action - policy.mean) / policy.std
    return -0.5 * z**2 - policy.log_std - HALF_LOG_2PI


@dataclass
class OptimizerState:
    """Adam moment accumulators mirroring a network's parameter tensors"""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: DenseNetworkParams) -> "OptimizerState":
        return cls(
            first_moment=[np.zeros_like(t) for t in params.tensors()],
            second_moment=[np.zeros_like(t) for t in params.tensors()],
        )


def optimizer_step(
    params: DenseNetworkParams,
    grads: DenseNetworkParams,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[DenseNetworkParams, OptimizerState]:
    """
    One bias-corrected adaptive-moment descent step.

    Raises:
        DivergenceError: If any gradient entry is non-finite
    """
    grad_tensors = grads.tensors()
    if not all(np.all(np.isfinite(g)) for g in grad_tensors):
        raise DivergenceError("non-finite gradient in optimizer step")

    step = state.step + 1
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step

    new_tensors = []
    first = []
    second = []
    for p, g, m, v in zip(params.tensors(), grad_tensors, state.first_moment, state.second_moment):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_tensors.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        first.append(m)
        second.append(v)

    new_params = DenseNetworkParams.from_tensors(new_tensors, params.activation)
    return new_params, OptimizerState(first_moment=first, second_moment=second, step=step)


@dataclass
class TrainableNetwork:
    """Network parameters together with their optimizer state"""

    params: DenseNetworkParams
    optimizer: OptimizerState

    @classmethod
    def create(cls, layer_sizes: list[int], rng: np.random.Generator) -> "TrainableNetwork":
        params = DenseNetworkParams.initialize(layer_sizes, rng)
        return cls(params=params, optimizer=OptimizerState.for_params(params))

    def apply_gradients(self, grads: DenseNetworkParams, lr: float) -> None:
        self.params, self.optimizer = optimizer_step(self.params, grads, self.optimizer, lr)


def flatten_params(params: DenseNetworkParams) -> np.ndarray:
    """Flat layout: per layer in order, weights row-major then biases."""
    return np.concatenate([t.ravel() for t in params.tensors()])


def unflatten_params(
    flat: np.ndarray,
    layer_sizes: list[int],
    activation: Activation = Activation.RELU,
) -> DenseNetworkParams:
    """
    Inverse of flatten_params.

    Raises:
        ValueError: If the vector length does not match the layer sizes
    """
    tensors = []
    offset = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        for shape in ((fan_out, fan_in), (fan_out,)):
            size = int(np.prod(shape))
            if offset + size > flat.size:
                raise ValueError("flat parameter vector is too short for the layer sizes")
            tensors.append(flat[offset:offset + size].reshape(shape).copy())
            offset += size
    if offset != flat.size:
        raise ValueError(f"flat parameter vector has {flat.size - offset} trailing entries")
    return DenseNetworkParams.from_tensors(tensors, activation)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, floor)."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradient_check(
    params: DenseNetworkParams,
    inputs: np.ndarray,
    upstream: np.ndarray,
    step: float = 1e-5,
) -> float:
    """
    Compare backward() with central finite differences of Σ forward·upstream.

    Returns:
        float: Largest relative error over all parameters and inputs
    """
    grads, input_grad = backward(params, inputs, upstream)
    flat = flatten_params(params)
    sizes = params.layer_sizes

    def objective(vector: np.ndarray, x: np.ndarray) -> float:
        return float(np.sum(forward(unflatten_params(vector, sizes, params.activation), x) * upstream))

    numeric = np.empty_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += step
        minus[i] -= step
        numeric[i] = (objective(plus, inputs) - objective(minus, inputs)) / (2.0 * step)

    x = np.asarray(inputs, dtype=float)
    numeric_input = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        plus = x.copy()
        minus = x.copy()
        plus[idx] += step
        minus[idx] -= step
        numeric_input[idx] = (objective(flat, plus) - objective(flat, minus)) / (2.0 * step)

    error = max(relative_error(flatten_params(grads), numeric), relative_error(input_grad, numeric_input))
    logger.debug("gradient check on %s: max relative error %.3e", sizes, error)
    return error
