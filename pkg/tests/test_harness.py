from __future__ import annotations

import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from kspoisson.harness import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    convergence_time,
    emit_plots,
    generate_truth,
    rmse_over_runs,
    run_experiment,
)
from kspoisson.harness.cli import main
from kspoisson.harness.config import parse_override
from kspoisson.harness.experiments import control_ratio, stationary_std
from kspoisson.harness.runner import derive_seed, filter_labels
from kspoisson.models import bearing_range

QUICK_OU = {"horizon": 0.5, "sir_ensemble": 300}


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in root.rglob("*") if p.is_file()}


# --- config -------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig("tracking", seed=2**63, n_runs=4, ensemble_sizes=[50, 200], filter="ekspf", overrides={"dt": 0.05})
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


@pytest.mark.parametrize(
    "kw",
    [
        dict(experiment="nope"),
        dict(experiment="tracking", seed=-1),
        dict(experiment="tracking", seed=2**64),
        dict(experiment="tracking", n_runs=0),
        dict(experiment="tracking", ensemble_sizes=[1]),
        dict(experiment="tracking", filter="kalman"),
        dict(experiment="tracking", overrides={"not_a_key": 1}),
        dict(experiment="duffing-control", filter="sir"),
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_config_from_dict_rejects_unknown_field():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "tracking", "colour": "red"})


def test_params_merge_overrides():
    p = ExperimentConfig("ou-validation", overrides={"theta": 2.0}).params()
    assert p["theta"] == 2.0
    assert p["sigma"] == EXPERIMENTS["ou-validation"].defaults["sigma"]


def test_parse_override():
    assert parse_override("alpha=[1, 2]") == ("alpha", [1, 2])
    assert parse_override("dt=0.5") == ("dt", 0.5)
    assert parse_override("name=abc") == ("name", "abc")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_filter_labels_and_seeds():
    cfg = ExperimentConfig("ou-validation", ensemble_sizes=[50, 200], filter="ekspf")
    assert [lab for lab, _, _ in filter_labels(cfg)] == ["ekspf_n50", "ekspf_n200"]
    assert derive_seed(1, 0) != derive_seed(1, 1) != derive_seed(1, 1, 1)
    assert derive_seed(5, 3, 2) == derive_seed(5, 3, 2)


# --- metrics ------------------------------------------------------------------


def test_rmse_examples():
    truth = np.zeros((1, 3))
    assert np.array_equal(rmse_over_runs([truth, truth], truth), np.zeros(3))
    np.testing.assert_allclose(rmse_over_runs([np.full((1, 3), -0.7)], truth), 0.7)
    runs = [np.array([[1.0, 0, 0]]), np.array([[3.0, 0, 0]])]
    assert rmse_over_runs(runs, truth)[0] == pytest.approx(np.sqrt(5))


def test_rmse_run_order_and_components():
    rng = np.random.default_rng(0)
    truth = rng.standard_normal((3, 10))
    runs = [truth + rng.standard_normal((3, 10)) for _ in range(4)]
    np.testing.assert_allclose(rmse_over_runs(runs, truth, [0, 2]), rmse_over_runs(runs[::-1], truth, [2, 0]), rtol=1e-14)
    np.testing.assert_allclose(rmse_over_runs(runs, truth, [1]), np.sqrt(np.mean([(r[1] - truth[1]) ** 2 for r in runs], axis=0)))


@pytest.mark.parametrize(
    "runs, comps",
    [([np.zeros((2, 4))], None), ([], None), ([np.zeros((3, 5))], []), ([np.zeros((3, 5))], [3])],
)
def test_rmse_argument_errors(runs, comps):
    with pytest.raises(ValueError):
        rmse_over_runs(runs, np.zeros((3, 5)), comps)


def test_convergence_time():
    t = np.arange(6.0)
    assert convergence_time(t, [5, 4, 3, 0.5, 0.2, 0.1], 1.0) == 3.0
    assert convergence_time(t, [5, 0.5, 3, 0.5, 0.2, 0.1], 1.0) == 3.0
    assert convergence_time(t, [0.1] * 6, 1.0) == 0.0
    assert convergence_time(t, [0.1] * 5 + [2.0], 1.0) is None
    assert convergence_time(t, [0.1] * 5 + [np.nan], 1.0) is None


def test_control_ratio_and_oracle_helpers():
    t = np.linspace(0, 4, 401)
    assert control_ratio(t, 0.25 * np.sin(t), np.sin(t), 2.0) == pytest.approx(0.25)
    p = {"theta": 2.0, "sigma": 1.0}
    assert stationary_std(p) == pytest.approx(0.5)


# --- truth generation ---------------------------------------------------------


def test_tracking_truth_manoeuvres():
    tr = generate_truth("tracking", 0)
    p = EXPERIMENTS["tracking"].defaults
    dt = p["dt"]
    dv = np.diff(tr.states[[1, 3]], axis=1)
    jumps = np.flatnonzero(np.abs(dv).sum(axis=0) > 1e-12)
    np.testing.assert_array_equal(jumps, np.round(np.array(p["manoeuvre_times"]) / dt).astype(int))
    for k, a in zip(jumps, p["manoeuvre_accels"]):
        np.testing.assert_allclose(dv[:, k], np.array(a) * dt)


def test_tracking_truth_noiseless_records():
    tr = generate_truth("tracking", 4, {"noise_rel": 0.0, "horizon": 5.0})
    expected = np.column_stack([bearing_range(col) for col in tr.states[:, 1:].T])
    np.testing.assert_array_equal(tr.records, expected)
    assert tr.records.shape == (2, tr.states.shape[1] - 1)


def test_shear_truth_without_excitation_is_zero():
    tr = generate_truth("shear-frame", 1, {"f0": 0.0, "sigma_diag": 0.0, "horizon": 0.5})
    assert not tr.states[:10].any()
    np.testing.assert_array_equal(tr.states[10:15, -1], np.full(5, 100.0))


def test_truth_is_seed_deterministic():
    a = generate_truth("ou-validation", 3, QUICK_OU)
    b = generate_truth("ou-validation", 3, QUICK_OU)
    c = generate_truth("ou-validation", 4, QUICK_OU)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.counts.counts, b.counts.counts)
    assert not np.array_equal(a.states, c.states)


def test_generate_truth_rejects_unknown_params():
    with pytest.raises(ValueError):
        generate_truth("tracking", 0, {"speed_of_light": 1.0})


# --- runner -------------------------------------------------------------------


def test_run_is_byte_identical(tmp_path):
    cfg = dict(experiment="ou-validation", seed=7, n_runs=1, overrides=QUICK_OU)
    run_experiment(ExperimentConfig(**cfg, out_dir=str(tmp_path / "a")))
    run_experiment(ExperimentConfig(**cfg, out_dir=str(tmp_path / "b")))
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    a.pop("config.json"), b.pop("config.json")
    assert a == b
    assert {"truth.csv", "summary.json", "rmse_ekspf.csv", "rmse_sir.csv", "run_000/ekspf.csv", "run_000/counts.csv"} <= set(a)


def test_artifact_layout_and_summary(tmp_path):
    art = run_experiment(ExperimentConfig("ou-validation", seed=1, n_runs=2, ensemble_sizes=[20, 40], out_dir=str(tmp_path), overrides=QUICK_OU))
    s = art.summary
    assert set(s["filters"]) == {"ekspf_n20", "ekspf_n40", "sir_n20", "sir_n40"}
    assert all(e["n_ok"] == 2 and e["failures"] == [] for e in s["filters"].values())
    assert set(s["comparison"]["gap_vs_oracle"]) == {"ekspf_n20", "ekspf_n40"}
    header = (tmp_path / "run_001" / "ekspf_n20.csv").read_text().splitlines()[0]
    assert header.split(",")[0] == "t"
    assert not art.failures


def test_failures_are_reported_not_dropped(tmp_path, monkeypatch):
    exp = EXPERIMENTS["ou-validation"]
    real = exp.run_filter

    def flaky(name, p, truth, n_e, seed):
        if name == "ekspf" and truth.times is flaky.bad_times:
            raise FloatingPointError("boom")
        return real(name, p, truth, n_e, seed)

    real_truth = exp.truth

    def truth_fn(p, seed):
        tr = real_truth(p, seed)
        if not hasattr(flaky, "bad_times"):
            flaky.bad_times = tr.times
        return tr

    monkeypatch.setitem(EXPERIMENTS, "ou-validation", dataclasses.replace(exp, run_filter=flaky, truth=truth_fn))
    art = run_experiment(ExperimentConfig("ou-validation", n_runs=2, out_dir=str(tmp_path), overrides=QUICK_OU))
    entry = art.summary["filters"]["ekspf"]
    assert entry["n_ok"] == 1
    assert entry["failures"] == [{"run": 0, "filter": "ekspf", "error": "FloatingPointError: boom"}]
    assert art.summary["filters"]["sir"]["n_ok"] == 2
    assert len(art.failures) == 1
    assert not (tmp_path / "run_000" / "ekspf.csv").exists()


def test_control_summary_reports_ratio(tmp_path):
    art = run_experiment(ExperimentConfig("duffing-control", n_runs=1, ensemble_sizes=[50], out_dir=str(tmp_path), overrides={"horizon": 3.0}))
    ratio = art.summary["filters"]["ekspf"]["rms_ratio"]
    assert 0 <= ratio["median"] < 1


@pytest.mark.slow
def test_tracking_known_start_stays_bounded(tmp_path):
    art = run_experiment(ExperimentConfig("tracking", n_runs=1, ensemble_sizes=[100], filter="all", out_dir=str(tmp_path)))
    for label in ("ekspf", "ensrf"):
        table = np.loadtxt(tmp_path / "run_000" / f"{label}.csv", delimiter=",", skiprows=1)
        assert np.isfinite(table).all()
        assert art.summary["filters"][label]["mean_euclidean_position_rmse"] < 50.0


# --- plots --------------------------------------------------------------------


@pytest.fixture(scope="module")
def ou_artifact(tmp_path_factory):
    out = tmp_path_factory.mktemp("ou")
    run_experiment(ExperimentConfig("ou-validation", n_runs=1, out_dir=str(out), overrides=QUICK_OU))
    return out


def test_plots_empty_list(ou_artifact):
    assert emit_plots(ou_artifact, []) == []


def test_plot_scripts_written(ou_artifact):
    paths = emit_plots(ou_artifact)
    assert sorted(p.name for p in paths) == ["plot_rmse.py", "plot_state.py"]
    with pytest.raises(ValueError):
        emit_plots(ou_artifact, ["trajectory"])


def test_plot_script_runs(ou_artifact):
    pytest.importorskip("matplotlib")
    (path,) = emit_plots(ou_artifact, ["rmse"])
    subprocess.run([sys.executable, str(path)], check=True, cwd="/")
    assert (ou_artifact / "plots" / "plot_rmse.png").is_file()


def test_plot_missing_csv_is_listed(tmp_path):
    run_experiment(ExperimentConfig("ou-validation", n_runs=1, out_dir=str(tmp_path), overrides=QUICK_OU))
    (tmp_path / "rmse_sir.csv").unlink()
    with pytest.raises(FileNotFoundError, match="rmse_sir.csv"):
        emit_plots(tmp_path, ["rmse"])


# --- CLI ------------------------------------------------------------------------


def test_cli_run_and_plot(tmp_path, capsys):
    out = tmp_path / "art"
    argv = ["run", "--experiment", "ou-validation", "--seed", "3", "--runs", "1", "--ensemble", "30", "--out", str(out)]
    argv += ["--override", "horizon=0.5", "--override", "sir_ensemble=200"]
    assert main(argv) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["overrides"] == {"horizon": 0.5, "sir_ensemble": 200}
    assert main(["plot", "--artifact", str(out)]) == 0
    (out / "rmse_ekspf.csv").unlink()
    assert main(["plot", "--artifact", str(out)]) == 2


def test_cli_config_file_and_flag_precedence(tmp_path):
    cfg = ExperimentConfig("ou-validation", seed=1, n_runs=1, filter="ekspf", overrides=QUICK_OU, out_dir=str(tmp_path / "x"))
    cfg.save(tmp_path / "cfg.json")
    assert main(["run", "--config", str(tmp_path / "cfg.json"), "--seed", "9", "--out", str(tmp_path / "y")]) == 0
    written = ExperimentConfig.load(tmp_path / "y" / "config.json")
    assert written.seed == 9 and written.filter == "ekspf"
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--experiment", "nope"],
        ["run"],
        ["run", "--experiment", "ou-validation", "--runs", "0"],
        ["run", "--experiment", "ou-validation", "--override", "bogus=1"],
        ["run", "--experiment", "duffing-control", "--filter", "sir"],
        ["frobnicate"],
    ],
)
def test_cli_usage_errors(argv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        code = main(argv + ["--out", str(tmp_path)] if argv[0] == "run" and len(argv) > 1 else argv)
        raise SystemExit(code)
    assert exc.value.code == 1


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch):
    exp = EXPERIMENTS["ou-validation"]

    def broken(*args):
        raise FloatingPointError("boom")

    monkeypatch.setitem(EXPERIMENTS, "ou-validation", dataclasses.replace(exp, run_filter=broken))
    argv = ["run", "--experiment", "ou-validation", "--runs", "1", "--out", str(tmp_path), "--override", "horizon=0.5"]
    assert main(argv) == 2


def test_cli_plot_usage_error(tmp_path):
    assert main(["plot", "--artifact", str(tmp_path)]) == 1


def test_cli_validate(capsys):
    assert main(["validate"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 7 and all(line.startswith("PASS") for line in lines)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "kspoisson", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "validate" in res.stdout
