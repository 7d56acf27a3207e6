import csv

import numpy as np
import pytest

import harness
from config import ErrorConfig, ErrorModel, ExperimentSpec, SweepKind, TrainingPreset
from harness import (
    LABELS,
    SweepResult,
    emit_csv,
    evaluate_baselines,
    load_policies,
    main,
    read_csv,
    reward_progress,
    run_gradcheck,
    run_training,
    sweep_error_model_1,
    sweep_error_model_2,
    sweep_user_distance,
)
from neural import DivergenceError
from sac import DIAGNOSTICS_HEADER, TrainingDiagnostics, load_checkpoint


@pytest.fixture
def trained(tmp_path, small_spec):
    checkpoint, _ = run_training(small_spec, tmp_path / "sac1.npz")
    return checkpoint


def test_training_writes_log_and_checkpoint(tmp_path, small_spec):
    checkpoint, log = run_training(small_spec, tmp_path / "run" / "sac.npz")
    with log.open(newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == DIAGNOSTICS_HEADER
    assert len(rows) == small_spec.sac.steps + 1
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 21))
    assert load_checkpoint(checkpoint).step == 20


def test_training_is_reproducible(tmp_path, small_spec):
    _, a = run_training(small_spec, tmp_path / "a.npz")
    _, b = run_training(small_spec, tmp_path / "b.npz")
    assert a.read_bytes() == b.read_bytes()


def test_zero_steps_still_checkpoints(tmp_path, small_spec):
    spec = small_spec.model_copy(update={"sac": small_spec.sac.model_copy(update={"steps": 0})})
    checkpoint, log = run_training(spec, tmp_path / "init.npz", tmp_path / "init.csv")
    assert log.read_text().strip() == ",".join(DIAGNOSTICS_HEADER)
    assert load_checkpoint(checkpoint).step == 0


def test_intermediate_checkpoints(tmp_path, small_spec):
    sac = small_spec.sac.model_copy(update={"checkpoint_interval": 10})
    run_training(small_spec.model_copy(update={"sac": sac}), tmp_path / "sac.npz")
    assert load_checkpoint(tmp_path / "sac_step10.npz").step == 10
    assert load_checkpoint(tmp_path / "sac_step20.npz").step == 20


def test_training_aborts_after_persistent_divergence(tmp_path, small_spec, monkeypatch):
    def diverged(self):
        self.step += 1
        return TrainingDiagnostics(step=self.step, diverged=True)

    monkeypatch.setattr(harness.SacLearner, "training_step", diverged)
    spec = small_spec.model_copy(update={"sac": small_spec.sac.model_copy(update={"steps": 500})})
    with pytest.raises(DivergenceError):
        run_training(spec, tmp_path / "sac.npz")
    assert (tmp_path / "sac_diverged.npz").exists()


def test_reward_progress(tmp_path, small_spec):
    _, log = run_training(small_spec, tmp_path / "sac.npz")
    first, last = reward_progress(log, window=5)
    assert first > 0.0 and last > 0.0


def test_distance_sweep_baselines(small_spec):
    grid = small_spec.sweeps.distance_grid
    result = sweep_user_distance({}, grid, small_spec)
    assert result.kind is SweepKind.DISTANCE
    assert result.labels == ["MMSE", "OMA"]
    assert result.means["MMSE"].shape == (5,)
    np.testing.assert_array_equal(result.stds["OMA"], 0.0)
    assert np.all(result.means["MMSE"] > 0.0)

    again = sweep_user_distance({}, grid, small_spec.with_seed(99))
    np.testing.assert_array_equal(again.means["MMSE"], result.means["MMSE"])


def test_sweeps_with_a_learned_precoder(trained, small_spec):
    policies = load_policies({"SAC1": trained})
    result = sweep_user_distance(policies, [950.0, 1000.0], small_spec)
    assert result.labels == ["MMSE", "OMA", "SAC1"]
    assert np.all(result.means["SAC1"] >= 0.0)

    result = sweep_error_model_1(policies, [0.0, 0.1], small_spec)
    assert result.labels == ["MMSE", "OMA", "SAC1"]
    assert np.all(result.stds["SAC1"] >= 0.0)


def test_unknown_policy_label(trained):
    with pytest.raises(ValueError):
        load_policies({"SAC9": trained})


def test_error_sweep_is_reproducible_and_worker_independent(small_spec):
    grid = [0.0, 0.05, 0.1]
    serial = sweep_error_model_1({}, grid, small_spec)
    assert serial.kind is SweepKind.ERROR1
    assert np.all(serial.stds["MMSE"] > 0.0)

    parallel_spec = small_spec.model_copy(update={"sweeps": small_spec.sweeps.model_copy(update={"workers": 2})})
    parallel = sweep_error_model_1({}, grid, parallel_spec)
    for label in serial.labels:
        np.testing.assert_array_equal(parallel.means[label], serial.means[label])
        np.testing.assert_array_equal(parallel.stds[label], serial.stds[label])


def test_error_sweeps_agree_without_sync_error(small_spec):
    one = sweep_error_model_1({}, [0.1], small_spec)
    two = sweep_error_model_2({}, [0.0], small_spec, delta_epsilon=0.1)
    assert two.kind is SweepKind.ERROR2
    np.testing.assert_allclose(two.means["MMSE"], one.means["MMSE"])


def test_mmse_degrades_with_csit_error(small_spec):
    spec = small_spec.model_copy(update={"monte_carlo_iterations": 40})
    result = sweep_error_model_1({}, [0.0, 0.3], spec)
    assert result.means["MMSE"][1] < result.means["MMSE"][0]


def test_evaluate_baselines(scenario):
    stats = evaluate_baselines(scenario, ErrorConfig(model=ErrorModel.MODEL1, delta_epsilon=0.05), 8, seed=0)
    assert set(stats) == {"MMSE", "OMA"}
    assert stats["MMSE"]["mean"] > 0.0
    assert stats["OMA"]["std"] >= 0.0


def test_csv_round_trip(tmp_path):
    result = SweepResult(
        kind=SweepKind.ERROR2,
        grid=np.array([0.0, 0.005]),
        means={"MMSE": np.array([1.0 / 3.0, 2.5]), "OMA": np.array([0.1, 0.2]), "SAC3": np.array([3.0, 2.0])},
        stds={"MMSE": np.array([0.01, 0.02]), "OMA": np.zeros(2), "SAC3": np.array([0.5, 0.25])},
    )
    path = emit_csv(result, tmp_path / "out" / "error2.csv")
    header = path.read_text().splitlines()[0]
    assert header == "sigma_zeta,MMSE_mean,MMSE_std,OMA_mean,OMA_std,SAC3_mean,SAC3_std"

    parsed = read_csv(path)
    assert parsed.kind is SweepKind.ERROR2
    assert parsed.labels == ["MMSE", "OMA", "SAC3"]
    np.testing.assert_array_equal(parsed.means["MMSE"], result.means["MMSE"])
    np.testing.assert_array_equal(parsed.stds["SAC3"], result.stds["SAC3"])


def test_csv_with_empty_grid(tmp_path):
    result = SweepResult(kind=SweepKind.ERROR1, grid=np.zeros(0), means={"MMSE": np.zeros(0)}, stds={"MMSE": np.zeros(0)})
    path = emit_csv(result, tmp_path / "empty.csv")
    assert path.read_text().strip() == "delta_epsilon,MMSE_mean,MMSE_std"
    assert read_csv(path).grid.size == 0


def test_labels_are_ordered():
    assert LABELS == ("MMSE", "OMA", "SAC1", "SAC2", "SAC3")


def test_gradcheck():
    network_error, actor_error = run_gradcheck(seed=3, networks=20)
    assert network_error < 1e-4
    assert actor_error < 1e-4


def _write_config(tmp_path, body=""):
    path = tmp_path / "exp.toml"
    path.write_text(
        "seed = 2\nmonte_carlo_iterations = 4\n"
        "[sac]\nbatch_size = 4\nbuffer_size = 16\nhidden_layers = 1\nhidden_nodes = 8\nsteps = 6\n"
        "[sweeps]\ndistance_points = 3\nerror1_grid = [0.0, 0.1]\nerror2_grid = [0.0, 0.01]\n" + body
    )
    return path


def test_cli_train_and_sweep(tmp_path, capsys):
    config = _write_config(tmp_path)
    checkpoint = tmp_path / "sac2.npz"
    assert main(["train", "--config", str(config), "--preset", "SAC2", "--out", str(checkpoint)]) == 0
    assert checkpoint.exists()

    out = tmp_path / "error1.csv"
    code = main(["sweep-error1", "--config", str(config), "--out", str(out), "--checkpoint", str(checkpoint)])
    assert code == 0
    assert read_csv(out).labels == ["MMSE", "OMA", "SAC2"]
    assert "✅" in capsys.readouterr().out


def test_cli_distance_sweep_without_checkpoints(tmp_path):
    out = tmp_path / "distance.csv"
    assert main(["sweep-distance", "--config", str(_write_config(tmp_path)), "--out", str(out)]) == 0
    assert read_csv(out).grid.size == 3


def test_cli_evaluate_baselines(tmp_path, capsys):
    config = _write_config(tmp_path)
    code = main(["evaluate-baselines", "--config", str(config), "--model", "model2",
                 "--delta-epsilon", "0.1", "--sigma-zeta", "0.01"])
    assert code == 0
    out = capsys.readouterr().out
    assert "MMSE" in out and "OMA" in out


def test_cli_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[sweeps]\nerror1_grid = [0.2, 0.1]\n")
    assert main(["sweep-error1", "--config", str(bad)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.toml")]) == 2


def test_cli_missing_checkpoint_fails(tmp_path):
    code = main(["sweep-error2", "--config", str(_write_config(tmp_path)), "--checkpoint", "SAC3=nope.npz",
                 "--out", str(tmp_path / "x.csv")])
    assert code == 1


def test_cli_gradcheck():
    assert main(["gradcheck", "--networks", "4"]) == 0


@pytest.mark.parametrize("command", ["sweep-distance", "sweep-error1", "evaluate-baselines"])
@pytest.mark.parametrize("iterations", ["0", "-5"])
def test_cli_rejects_non_positive_iterations(tmp_path, capsys, command, iterations):
    with pytest.raises(SystemExit) as exc:
        main([command, "--config", str(_write_config(tmp_path)), "--iterations", iterations,
              *(["--out", str(tmp_path / "x.csv")] if command.startswith("sweep") else [])])
    assert exc.value.code == 2
    assert "must be a positive integer" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


@pytest.mark.parametrize("workers", [1, 2])
def test_cli_iterations_override(tmp_path, workers):
    config = _write_config(tmp_path, f"workers = {workers}\n")
    out = tmp_path / "error1.csv"
    assert main(["sweep-error1", "--config", str(config), "--iterations", "3", "--out", str(out)]) == 0
    result = read_csv(out)
    assert np.all(np.isfinite(result.means["MMSE"]))
    assert np.all(result.stds["MMSE"] > 0.0)


def test_evaluate_baselines_needs_iterations(scenario):
    with pytest.raises(ValueError):
        evaluate_baselines(scenario, ErrorConfig(), 0, seed=0)


def test_standard_error_shrinks_with_iterations(scenario):
    error = ErrorConfig(model=ErrorModel.MODEL1, delta_epsilon=0.1)
    small = evaluate_baselines(scenario, error, 1_000, seed=0)
    large = evaluate_baselines(scenario, error, 10_000, seed=0)
    for label in ("MMSE", "OMA"):
        ratio = (small[label]["std"] / np.sqrt(1_000)) / (large[label]["std"] / np.sqrt(10_000))
        assert 2.5 <= ratio <= 3.8, label


@pytest.mark.parametrize("iterations", [2_000, pytest.param(10_000, marks=pytest.mark.slow)])
def test_mmse_is_non_increasing_in_delta_epsilon(iterations):
    spec = ExperimentSpec(monte_carlo_iterations=iterations, sweeps={"workers": 1})
    result = sweep_error_model_1({}, [0.0, 0.05, 0.1, 0.2], spec)
    means = result.means["MMSE"]
    errors = result.stds["MMSE"] / np.sqrt(iterations)
    for p in range(len(means) - 1):
        assert means[p + 1] <= means[p] + 2.0 * np.hypot(errors[p], errors[p + 1])


def test_stochastic_distance_sweep_uses_per_point_streams(trained, small_spec):
    policies = load_policies({"SAC1": trained})
    sweeps = small_spec.sweeps.model_copy(update={"stochastic_policy": True})
    stochastic = small_spec.model_copy(update={"sweeps": sweeps})
    grid = [950.0, 1000.0, 1050.0]

    first = sweep_user_distance(policies, grid, stochastic)
    np.testing.assert_array_equal(sweep_user_distance(policies, grid, stochastic).means["SAC1"], first.means["SAC1"])
    # A point's stream does not depend on how many points follow it
    assert sweep_user_distance(policies, grid[:1], stochastic).means["SAC1"][0] == first.means["SAC1"][0]

    mean_action = sweep_user_distance(policies, grid, small_spec)
    np.testing.assert_array_equal(first.means["MMSE"], mean_action.means["MMSE"])
    assert not np.array_equal(first.means["SAC1"], mean_action.means["SAC1"])
    assert not np.array_equal(sweep_user_distance(policies, grid, stochastic.with_seed(8)).means["SAC1"],
                              first.means["SAC1"])


def test_reduced_training_improves_reward(tmp_path):
    spec = ExperimentSpec(
        sac={"hidden_layers": 2, "hidden_nodes": 64, "critic_lr": 1e-3, "actor_lr": 1e-4, "steps": 4_000},
        sweeps={"workers": 1},
    )
    _, log = run_training(spec, tmp_path / "sac1.npz")
    first, last = reward_progress(log, window=500)
    assert last > 1.1 * first


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    runs = {}
    for preset in (TrainingPreset.SAC1, TrainingPreset.SAC2):
        spec = ExperimentSpec().with_preset(preset)
        runs[preset.value] = run_training(spec, out / f"{preset.value.lower()}.npz")
    return runs


@pytest.mark.slow
def test_full_training_improves_reward(full_runs):
    _, log = full_runs["SAC1"]
    first, last = reward_progress(log, window=1000)
    assert last >= 1.5 * first


@pytest.mark.slow
def test_full_sac1_against_baselines_over_the_distance_grid(full_runs):
    spec = ExperimentSpec()
    policies = load_policies({"SAC1": full_runs["SAC1"][0]})
    result = sweep_user_distance(policies, spec.sweeps.distance_grid, spec)
    sac1 = result.means["SAC1"].mean()
    assert sac1 >= 0.9 * result.means["MMSE"].mean()
    assert sac1 >= result.means["OMA"].mean()


@pytest.mark.slow
def test_full_sac2_is_robust_to_large_position_errors(full_runs):
    spec = ExperimentSpec(monte_carlo_iterations=10_000)
    policies = load_policies({"SAC2": full_runs["SAC2"][0]})
    result = sweep_error_model_1(policies, [0.3], spec)
    assert result.means["SAC2"][0] >= result.means["MMSE"][0]
