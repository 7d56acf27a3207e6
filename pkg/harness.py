#!/usr/bin/env python3
"""
harness.py - Training runs, evaluation sweeps, CSV output and the command line
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from channel import apply_error, build_true_channel
from config import (
    DEFAULT_OUT_DIR,
    ErrorConfig,
    ErrorModel,
    ExperimentSpec,
    ScenarioConfig,
    SweepKind,
    TrainingPreset,
    load_experiment_spec,
)
from geometry import place_constellation
from neural import DenseNetworkParams, DivergenceError, gradient_check
from precoding import mmse_precoder, oma_sum_rate, sum_rate
from sac import (
    DIAGNOSTICS_HEADER,
    SacLearner,
    action_to_precoder,
    actor_loss_gradient_check,
    load_checkpoint,
    policy_action,
    preprocess_csit,
    save_checkpoint,
    state_amplitude_scale,
)
from seeding import iteration_seeds

logger = logging.getLogger(__name__)

BASELINE_LABELS = ("MMSE", "OMA")
LEARNED_LABELS = tuple(p.value for p in TrainingPreset)
LABELS = BASELINE_LABELS + LEARNED_LABELS
MAX_DIVERGED_STEPS = 100
GRADCHECK_TOLERANCE = 1e-4

GRID_COLUMNS = {
    SweepKind.DISTANCE: "user_distance",
    SweepKind.ERROR1: "delta_epsilon",
    SweepKind.ERROR2: "sigma_zeta",
}


@dataclass
class SweepResult:
    """Mean and standard deviation of the sum rate per grid point and precoder"""

    kind: SweepKind
    grid: np.ndarray
    means: dict[str, np.ndarray] = field(default_factory=dict)
    stds: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [label for label in LABELS if label in self.means]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "grid": self.grid.tolist(),
            "precoders": {
                label: {"mean": self.means[label].tolist(), "std": self.stds[label].tolist()}
                for label in self.labels
            },
        }


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def run_training(
    spec: ExperimentSpec,
    checkpoint_path: str | Path,
    log_path: Optional[str | Path] = None,
) -> tuple[Path, Path]:
    """
    Train one SAC precoder for spec.sac.steps iterations.

    Args:
        spec: Experiment specification (training error model included)
        checkpoint_path: Where the final checkpoint is written
        log_path: Per-step diagnostics CSV; defaults to <checkpoint>.log.csv

    Returns:
        tuple: (checkpoint path, diagnostics log path)

    Raises:
        DivergenceError: If MAX_DIVERGED_STEPS consecutive steps diverge
    """
    checkpoint_path = Path(checkpoint_path)
    log_path = Path(log_path) if log_path else checkpoint_path.with_suffix(".log.csv")
    log_path.parent.mkdir(parents=True, exist_ok=True)

    learner = SacLearner(spec.scenario, spec.sac, spec.training_error, spec.seed)
    sac = spec.sac
    logger.info(
        "Training %d steps, error model %s, seed %d",
        sac.steps, spec.training_error.model.value, spec.seed,
    )

    diverged_run = 0
    window: list[float] = []
    with log_path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DIAGNOSTICS_HEADER)
        for t in range(1, sac.steps + 1):
            diag = learner.training_step()
            writer.writerow(diag.to_row())

            diverged_run = diverged_run + 1 if diag.diverged else 0
            if diverged_run >= MAX_DIVERGED_STEPS:
                save_checkpoint(learner, checkpoint_path.with_name(f"{checkpoint_path.stem}_diverged.npz"))
                raise DivergenceError(f"{diverged_run} consecutive diverged steps at step {t}")

            if not diag.diverged:
                window.append(diag.reward)
            if t % sac.log_interval == 0:
                logger.info(
                    "Step %d: mean reward %.4f over last %d steps, temperature %.4g",
                    t, float(np.mean(window)) if window else float("nan"), len(window), learner.temperature.temperature,
                )
                window.clear()
            if sac.checkpoint_interval and t % sac.checkpoint_interval == 0:
                save_checkpoint(learner, checkpoint_path.with_name(f"{checkpoint_path.stem}_step{t}.npz"))

    save_checkpoint(learner, checkpoint_path)
    return checkpoint_path, log_path


def read_rewards(log_path: str | Path) -> np.ndarray:
    """Rewards column of a diagnostics log."""
    with Path(log_path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    return np.array([float(row["reward"]) for row in rows])


def reward_progress(log_path: str | Path, window: int = 1000) -> tuple[float, float]:
    """Mean reward of the first and of the last `window` steps of a run."""
    rewards = read_rewards(log_path)
    rewards = rewards[np.isfinite(rewards)]
    if rewards.size == 0:
        return float("nan"), float("nan")
    return float(np.mean(rewards[:window])), float(np.mean(rewards[-window:]))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def load_policies(checkpoints: dict[str, str | Path]) -> dict[str, DenseNetworkParams]:
    """Actor parameters per precoder label."""
    unknown = set(checkpoints) - set(LEARNED_LABELS)
    if unknown:
        raise ValueError(f"unknown precoder labels {sorted(unknown)}; expected {LEARNED_LABELS}")
    return {label: load_checkpoint(path).actor for label, path in checkpoints.items()}


def evaluate_precoders(
    H: np.ndarray,
    H_tilde: np.ndarray,
    scenario: ScenarioConfig,
    policies: dict[str, DenseNetworkParams],
    rng: Optional[np.random.Generator] = None,
) -> dict[str, float]:
    """
    Sum rate of every precoder on the true channel, built from the CSIT H̃.

    Learned precoders act with their mean action unless a random stream is given.
    """
    sc = scenario
    rates = {
        "MMSE": sum_rate(H, mmse_precoder(H_tilde, sc.total_power, sc.noise_power, sc.num_users, sc.num_sats), sc.noise_power),
        "OMA": oma_sum_rate(H, H_tilde, sc.total_power, sc.noise_power),
    }
    if policies:
        state = preprocess_csit(H_tilde, state_amplitude_scale(sc))
        for label, actor in policies.items():
            action = policy_action(actor, state, rng)
            W = action_to_precoder(action, sc.total_power, sc.num_sats, sc.ants_per_sat, sc.num_users)
            rates[label] = sum_rate(H, W, sc.noise_power)
    return rates


def _ordered_labels(policies: dict[str, DenseNetworkParams]) -> list[str]:
    return [label for label in LABELS if label in BASELINE_LABELS or label in policies]


def _run_iterations(
    seeds: Sequence[np.random.SeedSequence],
    scenario: ScenarioConfig,
    error: ErrorConfig,
    policies: dict[str, DenseNetworkParams],
    stochastic: bool,
) -> np.ndarray:
    # One row per Monte Carlo iteration, one column per label
    labels = _ordered_labels(policies)
    out = np.empty((len(seeds), len(labels)))
    for i, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        placement = place_constellation(scenario, scenario.user_jitter_bound, rng)
        H = build_true_channel(placement, scenario)
        H_tilde = apply_error(H, error, scenario, rng)
        rates = evaluate_precoders(H, H_tilde, scenario, policies, rng if stochastic else None)
        out[i] = [rates[label] for label in labels]
    return out


def _chunks(items: list, parts: int) -> list[list]:
    size = -(-len(items) // parts)
    return [items[i:i + size] for i in range(0, len(items), size)]


def _monte_carlo(
    seeds: list[np.random.SeedSequence],
    scenario: ScenarioConfig,
    error: ErrorConfig,
    policies: dict[str, DenseNetworkParams],
    stochastic: bool,
    executor: Optional[ProcessPoolExecutor],
    workers: int = 1,
) -> np.ndarray:
    if executor is None:
        return _run_iterations(seeds, scenario, error, policies, stochastic)
    chunks = _chunks(seeds, workers)
    futures = [executor.submit(_run_iterations, c, scenario, error, policies, stochastic) for c in chunks]
    return np.concatenate([f.result() for f in futures], axis=0)


def _error_sweep(
    kind: SweepKind,
    errors: list[ErrorConfig],
    grid: Sequence[float],
    policies: dict[str, DenseNetworkParams],
    spec: ExperimentSpec,
) -> SweepResult:
    labels = _ordered_labels(policies)
    seeds = iteration_seeds(spec.seed, len(grid), spec.monte_carlo_iterations)
    means = np.empty((len(grid), len(labels)))
    stds = np.empty((len(grid), len(labels)))

    workers = spec.sweeps.workers
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for p, (value, error) in enumerate(zip(grid, errors)):
            rates = _monte_carlo(seeds[p], spec.scenario, error, policies, spec.sweeps.stochastic_policy, executor, workers)
            means[p] = rates.mean(axis=0)
            stds[p] = rates.std(axis=0)
            logger.info("%s %s=%g: %s", kind.value, GRID_COLUMNS[kind], value,
                        ", ".join(f"{l} {m:.4f}" for l, m in zip(labels, means[p])))
    finally:
        if executor is not None:
            executor.shutdown()

    return SweepResult(
        kind=kind,
        grid=np.asarray(grid, dtype=float),
        means={label: means[:, j] for j, label in enumerate(labels)},
        stds={label: stds[:, j] for j, label in enumerate(labels)},
    )


def sweep_user_distance(
    policies: dict[str, DenseNetworkParams],
    grid: Sequence[float],
    spec: ExperimentSpec,
) -> SweepResult:
    """
    Perfect-CSIT sum rate over mean user distances, zero jitter, one evaluation per point.
    """
    labels = _ordered_labels(policies)
    means = np.empty((len(grid), len(labels)))
    seeds = iteration_seeds(spec.seed, len(grid), 1)
    for p, distance in enumerate(grid):
        rng = np.random.default_rng(seeds[p][0])
        scenario = spec.scenario.model_copy(update={"mean_user_distance": float(distance)})
        # Zero bound: the placement does not depend on the stream
        placement = place_constellation(scenario, 0.0, rng)
        H = build_true_channel(placement, scenario)
        rates = evaluate_precoders(H, H, scenario, policies, rng if spec.sweeps.stochastic_policy else None)
        means[p] = [rates[label] for label in labels]

    return SweepResult(
        kind=SweepKind.DISTANCE,
        grid=np.asarray(grid, dtype=float),
        means={label: means[:, j] for j, label in enumerate(labels)},
        stds={label: np.zeros(len(grid)) for label in labels},
    )


def sweep_error_model_1(
    policies: dict[str, DenseNetworkParams],
    grid: Sequence[float],
    spec: ExperimentSpec,
) -> SweepResult:
    """Monte Carlo sum rate over error-model-1 bounds Δε, user jitter per draw."""
    errors = [ErrorConfig(model=ErrorModel.MODEL1, delta_epsilon=value) for value in grid]
    return _error_sweep(SweepKind.ERROR1, errors, grid, policies, spec)


def sweep_error_model_2(
    policies: dict[str, DenseNetworkParams],
    grid: Sequence[float],
    spec: ExperimentSpec,
    delta_epsilon: Optional[float] = None,
) -> SweepResult:
    """Monte Carlo sum rate over synchronization error scales σ_ζ at a fixed Δε."""
    if delta_epsilon is None:
        delta_epsilon = spec.sweeps.error2_delta_epsilon
    errors = [
        ErrorConfig(model=ErrorModel.MODEL2, delta_epsilon=delta_epsilon, sigma_zeta=value) for value in grid
    ]
    return _error_sweep(SweepKind.ERROR2, errors, grid, policies, spec)


def evaluate_baselines(
    scenario: ScenarioConfig,
    error: ErrorConfig,
    iterations: int,
    seed: int,
) -> dict[str, dict[str, float]]:
    """MMSE and OMA Monte Carlo mean and standard deviation for one error setting."""
    if iterations < 1:
        raise ValueError(f"iterations must be positive, got {iterations}")
    seeds = iteration_seeds(seed, 1, iterations)[0]
    rates = _run_iterations(seeds, scenario, error, {}, False)
    return {
        label: {"mean": float(rates[:, j].mean()), "std": float(rates[:, j].std())}
        for j, label in enumerate(BASELINE_LABELS)
    }


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def emit_csv(result: SweepResult, path: str | Path) -> Path:
    """
    Write one row per grid point: grid value, then mean and std per precoder.

    Raises:
        OSError: If the path is not writable
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [GRID_COLUMNS[result.kind]]
    for label in result.labels:
        header += [f"{label}_mean", f"{label}_std"]
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for p, value in enumerate(result.grid):
            row = [format(value, ".17g")]
            for label in result.labels:
                row += [format(result.means[label][p], ".17g"), format(result.stds[label][p], ".17g")]
            writer.writerow(row)
    return path


def read_csv(path: str | Path) -> SweepResult:
    """Parse a file written by emit_csv."""
    with Path(path).open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]

    kinds = {column: kind for kind, column in GRID_COLUMNS.items()}
    if header[0] not in kinds:
        raise ValueError(f"unknown grid column {header[0]!r}")
    table = np.array(rows).reshape(len(rows), len(header))
    labels = [column[: -len("_mean")] for column in header[1::2]]
    return SweepResult(
        kind=kinds[header[0]],
        grid=table[:, 0],
        means={label: table[:, 1 + 2 * j] for j, label in enumerate(labels)},
        stds={label: table[:, 2 + 2 * j] for j, label in enumerate(labels)},
    )


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def run_gradcheck(seed: int, networks: int = 20) -> tuple[float, float]:
    """
    Finite-difference checks on random small networks and on the actor loss.

    Returns:
        tuple: (largest network error, actor loss error)
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(networks):
        hidden = list(rng.integers(1, 17, size=rng.integers(0, 3)))
        sizes = [int(rng.integers(1, 9))] + [int(h) for h in hidden] + [int(rng.integers(1, 5))]
        params = DenseNetworkParams.initialize(sizes, rng)
        for b in params.biases:
            b[:] = rng.normal(0.0, 0.1, size=b.shape)
        inputs = rng.standard_normal((3, sizes[0]))
        upstream = rng.standard_normal((3, sizes[-1]))
        worst = max(worst, gradient_check(params, inputs, upstream))
    return worst, actor_loss_gradient_check(rng)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _parse_checkpoints(values: Optional[list[str]], default_label: str) -> dict[str, str]:
    checkpoints = {}
    for value in values or []:
        label, sep, path = value.partition("=")
        if not sep:
            label, path = default_label, value
        checkpoints[label.strip()] = path.strip()
    return checkpoints


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return number


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harness.py",
        description="Cooperative LEO satellite precoding: SAC training and evaluation sweeps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="TOML experiment config (default: SATPRECODE_CONFIG)")
        p.add_argument("--seed", type=int, default=None, help="Master seed override")

    train = sub.add_parser("train", help="Train a SAC precoder")
    common(train)
    train.add_argument("--preset", choices=LEARNED_LABELS, default=None, help="Training error preset")
    train.add_argument("--out", default=None, help="Checkpoint path")
    train.add_argument("--log", default=None, help="Diagnostics CSV path")

    sweeps = {
        "sweep-distance": (SweepKind.DISTANCE, "SAC1"),
        "sweep-error1": (SweepKind.ERROR1, "SAC2"),
        "sweep-error2": (SweepKind.ERROR2, "SAC3"),
    }
    for name, (kind, default_label) in sweeps.items():
        p = sub.add_parser(name, help=f"Run the {kind.value}")
        common(p)
        p.add_argument("--out", default=None, help="CSV output path")
        p.add_argument(
            "--checkpoint", action="append",
            help=f"LABEL=PATH of a trained precoder (repeatable; bare PATH means {default_label})",
        )
        p.add_argument("--iterations", type=_positive_int, default=None, help="Monte Carlo iterations override")
        p.set_defaults(kind=kind, default_label=default_label)

    base = sub.add_parser("evaluate-baselines", help="MMSE and OMA Monte Carlo sum rate for one error setting")
    common(base)
    base.add_argument("--model", choices=[m.value for m in ErrorModel], default=ErrorModel.NONE.value)
    base.add_argument("--delta-epsilon", type=float, default=0.0)
    base.add_argument("--sigma-zeta", type=float, default=0.0)
    base.add_argument("--iterations", type=_positive_int, default=None, help="Monte Carlo iterations override")

    grad = sub.add_parser("gradcheck", help="Finite-difference gradient checks")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--networks", type=int, default=20)

    serve = sub.add_parser("serve", help="Run the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=int(os.getenv("PORT", "8000")))
    return parser


def _run_sweep(args: argparse.Namespace, spec: ExperimentSpec) -> int:
    spec = spec.with_iterations(args.iterations)
    policies = load_policies(_parse_checkpoints(args.checkpoint, args.default_label))
    grid = spec.sweeps.grid_for(args.kind)

    if args.kind is SweepKind.DISTANCE:
        result = sweep_user_distance(policies, grid, spec)
    elif args.kind is SweepKind.ERROR1:
        result = sweep_error_model_1(policies, grid, spec)
    else:
        result = sweep_error_model_2(policies, grid, spec)

    out = args.out or str(Path(DEFAULT_OUT_DIR) / f"{args.kind.value}.csv")
    emit_csv(result, out)
    print(f"✅ {args.kind.value}: {len(grid)} points, precoders {', '.join(result.labels)} -> {out}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    logging.basicConfig(
        level=os.getenv("SATPRECODE_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)

    if args.command == "gradcheck":
        network_error, actor_error = run_gradcheck(args.seed, args.networks)
        ok = network_error <= GRADCHECK_TOLERANCE and actor_error <= GRADCHECK_TOLERANCE
        mark = "✅" if ok else "❌"
        print(f"{mark} networks: max relative error {network_error:.3e}; actor loss: {actor_error:.3e}")
        return 0 if ok else 1

    if args.command == "serve":
        import uvicorn

        uvicorn.run("api:app", host=args.host, port=args.port)
        return 0

    try:
        spec = load_experiment_spec(args.config).with_seed(args.seed)
    except (ValidationError, FileNotFoundError) as e:
        print(f"❌ Invalid configuration: {e}")
        return 2

    if args.command == "train":
        if args.preset:
            spec = spec.with_preset(TrainingPreset(args.preset))
        out = args.out or str(Path(DEFAULT_OUT_DIR) / f"{args.preset or 'sac'}.npz")
        try:
            checkpoint, log = run_training(spec, out, args.log)
        except DivergenceError as e:
            print(f"❌ Training diverged: {e}")
            return 1
        first, last = reward_progress(log)
        print(f"✅ Trained {spec.sac.steps} steps -> {checkpoint}")
        print(f"   Mean reward first window {first:.4f}, last window {last:.4f} (log: {log})")
        return 0

    if args.command == "evaluate-baselines":
        try:
            error = ErrorConfig(
                model=ErrorModel(args.model), delta_epsilon=args.delta_epsilon, sigma_zeta=args.sigma_zeta
            )
        except ValidationError as e:
            print(f"❌ Invalid error model: {e}")
            return 2
        iterations = spec.with_iterations(args.iterations).monte_carlo_iterations
        stats = evaluate_baselines(spec.scenario, error, iterations, spec.seed)
        for label, values in stats.items():
            print(f"✅ {label}: mean {values['mean']:.4f} nats/s/Hz, std {values['std']:.4f} ({iterations} iterations)")
        return 0

    try:
        return _run_sweep(args, spec)
    except (ValueError, FileNotFoundError) as e:
        print(f"❌ Sweep failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
