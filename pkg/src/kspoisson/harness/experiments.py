"""Experiment registry: truth generation, filter drivers and summaries.

Every experiment is a set of JSON-friendly default parameters plus four
callables. Parameters are overridable one key at a time from the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..baselines import ensrf_run, sir_run
from ..ekspf import run_control
from ..ekspf import FilterConfig, make_virtual_measurements, run_filter_diffusion, run_filter_poisson
from ..models import (
    DuffingControlProblem,
    IntensityModel,
    MeasurementOperator,
    ProcessModel,
    ShearFrameParams,
    TrackingScenario,
    VirtualIntensity,
    bearing_range_operator,
    circle_truth,
    displacement_intensity,
    shear_frame_process_model,
    shear_frame_truth,
    tracking_process_model,
    tracking_truth,
)
from ..stochastic import (
    STREAM_COUNTING,
    STREAM_MEASUREMENT,
    STREAM_PROCESS,
    CountingPath,
    RandomSource,
    TimeGrid,
    simulate_counting_path,
)
from .metrics import convergence_time, rmse_over_runs


@dataclass
class Truth:
    """Reference trajectory plus whatever measurement record the filters consume.

    ``records[:, i]`` is the diffusion-type measurement at ``times[i + 1]``.
    """

    times: np.ndarray
    states: np.ndarray
    labels: list[str]
    records: np.ndarray | None = None
    record_labels: list[str] = field(default_factory=list)
    counts: CountingPath | None = None


@dataclass
class FilterOutput:
    """What one filter produced in one run; ``table`` rows are named by ``labels``."""

    times: np.ndarray
    table: np.ndarray
    labels: list[str]
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    defaults: dict
    filters: tuple[str, ...]
    shared_truth: bool
    truth: Callable[[dict, int], Truth]
    run_filter: Callable[[str, dict, Truth, int, int], FilterOutput]
    rmse: Callable[[dict, list[Truth], list[FilterOutput]], dict[str, np.ndarray]]
    summarize: Callable[[dict, list[Truth], list[FilterOutput]], dict]
    # cross-filter metrics from {label: {run: output}}
    compare: Callable[[dict, dict], dict] | None = None


def _n_steps(p: dict) -> int:
    n = int(round(p["horizon"] / p["dt"]))
    if n < 1:
        raise ValueError("horizon must cover at least one step")
    return n


def _relative_noise(rng, clean: np.ndarray, rel: float, floor: float = 0.0) -> np.ndarray:
    std = np.maximum(rel * np.abs(clean), floor)
    return clean + std * rng.standard_normal(clean.shape)


def _group_rmse(groups: dict[str, list[int]]):
    def rmse(p, truths, outs):
        per_run_truth = [t.states for t in truths]
        res = {}
        for name, comps in groups.items():
            errs = [o.table[comps] - tr[comps] for o, tr in zip(outs, per_run_truth)]
            res[name] = rmse_over_runs(errs, np.zeros_like(errs[0]))
        return res

    return rmse


def _final(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"per_run": [float(v) for v in arr], "median": float(np.median(arr))}


# --- tracking ---------------------------------------------------------------

TRACKING_DEFAULTS = {
    "dt": 0.01,
    "horizon": 100.0,
    "x0": [0.5, 3.0, 1.0, 1.0],
    "manoeuvre_times": [20.0, 30.0, 60.0, 80.0],
    "manoeuvre_accels": [[-40.0, 40.0], [25.0, -25.0], [25.0, -25.0], [-60.0, 60.0]],
    "accel_intensity": 0.1,
    "manoeuvre_intensity": 100.0,
    "alpha": [1e5, 1e4],
    "noise_rel": 0.05,
    "noise_floor": 1e-6,
    "initial_offset": [0.0, 0.0, 0.0, 0.0],
    "initial_cov": 1e-4,
    "convergence_threshold": 10.0,
}

CIRCLE_DEFAULTS = {
    **{k: v for k, v in TRACKING_DEFAULTS.items() if k not in ("x0", "manoeuvre_times", "manoeuvre_accels")},
    "center": [100.0, 100.0],
    "radius": 50.0,
    "period": 60.0,
}


def _scenario(p: dict) -> TrackingScenario:
    # manoeuvres scheduled past a shortened horizon are dropped
    schedule = [(t, tuple(a)) for t, a in zip(p.get("manoeuvre_times", ()), p.get("manoeuvre_accels", ())) if t < p["horizon"]]
    return TrackingScenario(
        x0=np.asarray(p.get("x0", TRACKING_DEFAULTS["x0"]), dtype=float),
        manoeuvre_times=tuple(t for t, _ in schedule),
        manoeuvre_accels=tuple(a for _, a in schedule),
        accel_intensity=p["accel_intensity"],
        manoeuvre_intensity=p["manoeuvre_intensity"],
        horizon=p["horizon"],
    )


def _tracking_records(p: dict, times, states, seed: int) -> Truth:
    op = bearing_range_operator()
    clean = op.observe(0.0, states[:, 1:])
    rng = RandomSource(seed, STREAM_MEASUREMENT).generator()
    records = _relative_noise(rng, clean, p["noise_rel"])
    return Truth(times, states, ["x", "vx", "y", "vy"], records, ["bearing", "range"])


def tracking_truth_fn(p: dict, seed: int) -> Truth:
    times, states = tracking_truth(_scenario(p), p["dt"])
    return _tracking_records(p, times, states, seed)


def circle_truth_fn(p: dict, seed: int) -> Truth:
    times, states = circle_truth(p["center"], p["radius"], p["period"], p["horizon"], p["dt"])
    return _tracking_records(p, times, states, seed)


def _tracking_run(name: str, p: dict, truth: Truth, n_e: int, seed: int) -> FilterOutput:
    model = tracking_process_model(_scenario(p), p["dt"])
    op = bearing_range_operator()
    cfg = FilterConfig(
        dt=p["dt"],
        initial_mean=truth.states[:, 0] + np.asarray(p["initial_offset"], dtype=float),
        initial_cov_diag=p["initial_cov"],
        n_e=n_e,
        seed=seed,
    )
    alpha = np.asarray(p["alpha"], dtype=float)
    if name == "ekspf":
        traj = run_filter_diffusion(cfg, truth.records, model, op, alpha)
    elif name == "ensrf":
        rel, floor = p["noise_rel"], p["noise_floor"]
        traj = ensrf_run(cfg, truth.records, model, op, noise_std_fn=lambda obs: np.maximum(rel * np.abs(obs), floor))
    elif name == "sir":
        grid = TimeGrid(0.0, p["dt"], truth.records.shape[1])
        path = make_virtual_measurements(truth.records, alpha, grid, RandomSource(seed, STREAM_COUNTING))
        traj = sir_run(cfg, path, model, VirtualIntensity(alpha, op))
    else:
        raise ValueError(f"unknown filter {name!r}")
    return FilterOutput(traj.times, traj.estimates, ["x", "vx", "y", "vy"])


def _tracking_summary(p, truths, outs) -> dict:
    pos_err = [np.hypot(o.table[0] - t.states[0], o.table[2] - t.states[2]) for o, t in zip(outs, truths)]
    conv = [convergence_time(outs[0].times, e, p["convergence_threshold"]) for e in pos_err]
    settled = [c for c in conv if c is not None]
    rmse = np.sqrt(np.mean(np.square(pos_err), axis=0))
    return {
        "final_euclidean_position_rmse": float(rmse[-1]),
        "mean_euclidean_position_rmse": float(rmse.mean()),
        "convergence_time": {
            "threshold": p["convergence_threshold"],
            "per_run": conv,
            "median": float(np.median(settled)) if settled else None,
            "never_converged": len(conv) - len(settled),
        },
    }


# --- shear frame ------------------------------------------------------------

SHEAR_DEFAULTS = {
    "dt": 0.001,
    "horizon": 20.0,
    "n_floors": 5,
    "k_true": 100.0,
    "c_true": 5.0,
    "f0": 30.0,
    "omega": 1.0,
    "sigma_diag": 0.01,
    "alpha": 1e6,
    "initial_k_mean": 80.0,
    "initial_k_var": 100.0,
    "initial_c_mean": 3.0,
    "initial_c_var": 1.0,
    "initial_state_var": 1e-8,
    "walk_start": 0.5,
    "walk_end": 0.05,
    "record_noise_rel": 0.01,
    "record_noise_floor": 1e-6,
}


def _shear_params(p: dict) -> ShearFrameParams:
    return ShearFrameParams(
        n_floors=p["n_floors"], k_true=p["k_true"], c_true=p["c_true"], f0=p["f0"], omega=p["omega"], sigma_diag=p["sigma_diag"]
    )


def shear_truth_fn(p: dict, seed: int) -> Truth:
    sp = _shear_params(p)
    n, nf = _n_steps(p), sp.n_floors
    noise = RandomSource(seed, STREAM_PROCESS).generator().standard_normal((nf, n))
    resp = shear_frame_truth(sp, p["dt"], n, noise)
    params = np.concatenate([sp.k_true, sp.c_true])
    states = np.vstack([resp, np.repeat(params[:, None], n + 1, axis=1)])
    grid = TimeGrid(0.0, p["dt"], n)
    alpha = np.broadcast_to(np.asarray(p["alpha"], dtype=float), (nf,))
    meas = RandomSource(seed, STREAM_MEASUREMENT)
    counts = simulate_counting_path(meas.child(0), alpha[:, None] * np.abs(resp[:nf, 1:]), grid)
    records = _relative_noise(meas.child(1).generator(), resp[:nf, 1:], p["record_noise_rel"], p["record_noise_floor"])
    labels = (
        [f"x{i}" for i in range(nf)] + [f"v{i}" for i in range(nf)] + [f"k{i}" for i in range(nf)] + [f"c{i}" for i in range(nf)]
    )
    return Truth(grid.times, states, labels, records, [f"x{i}" for i in range(nf)], counts)


def _shear_run(name: str, p: dict, truth: Truth, n_e: int, seed: int) -> FilterOutput:
    sp = _shear_params(p)
    nf = sp.n_floors
    model = shear_frame_process_model(sp, p["horizon"], p["walk_start"], p["walk_end"])
    mean = np.concatenate([np.zeros(2 * nf), np.full(nf, p["initial_k_mean"]), np.full(nf, p["initial_c_mean"])])
    cov = np.concatenate(
        [np.full(2 * nf, p["initial_state_var"]), np.full(nf, p["initial_k_var"]), np.full(nf, p["initial_c_var"])]
    )
    cfg = FilterConfig(dt=p["dt"], initial_mean=mean, initial_cov_diag=cov, n_e=n_e, seed=seed)
    intensity = displacement_intensity(nf, p["alpha"])
    if name == "ekspf":
        traj = run_filter_poisson(cfg, truth.counts, model, intensity)
    elif name == "sir":
        traj = sir_run(cfg, truth.counts, model, intensity)
    elif name == "ensrf":
        op = MeasurementOperator(nf, lambda t, x: np.asarray(x)[:nf], np.zeros(nf))
        rel, floor = p["record_noise_rel"], p["record_noise_floor"]
        traj = ensrf_run(cfg, truth.records, model, op, noise_std_fn=lambda obs: np.maximum(rel * np.abs(obs), floor))
    else:
        raise ValueError(f"unknown filter {name!r}")
    return FilterOutput(traj.times, traj.estimates, truth.labels)


def _shear_summary(p, truths, outs) -> dict:
    nf = p["n_floors"]
    k_hat = np.array([o.table[2 * nf : 3 * nf, -1] for o in outs])
    c_hat = np.array([o.table[3 * nf :, -1] for o in outs])
    k_true, c_true = truths[0].states[2 * nf : 3 * nf, 0], truths[0].states[3 * nf :, 0]
    k_med, c_med = np.median(k_hat, axis=0), np.median(c_hat, axis=0)
    return {
        "final_stiffness": {"per_run": k_hat.tolist(), "median": k_med.tolist()},
        "final_damping": {"per_run": c_hat.tolist(), "median": c_med.tolist()},
        "stiffness_relative_error": (np.abs(k_med - k_true) / k_true).tolist(),
        "damping_relative_error": (np.abs(c_med - c_true) / c_true).tolist(),
    }


def _shear_rmse(p, truths, outs):
    nf = p["n_floors"]
    return _group_rmse({"stiffness": list(range(2 * nf, 3 * nf)), "damping": list(range(3 * nf, 4 * nf))})(p, truths, outs)


# --- Duffing control --------------------------------------------------------

CONTROL_DEFAULTS = {
    "dt": 0.01,
    "horizon": 10.0,
    "c": 5.0,
    "k": 100.0,
    "d": 0.0,
    "f0": 20.0,
    "omega": 5.0,
    "sigma": 0.01,
    "xg0": 0.05,
    "omega_g": 4.0,
    "weight_R": [[0.1, 0.0], [0.0, 0.1]],
    "weight_S": 0.0,
    "control_walk_sigma": 50.0,
    "inner_iterations": 5,
    "alpha_control": 1e4,
    "initial_control_mean": 0.0,
    "initial_control_var": 1.0,
    "redraw_per_iteration": True,
    "steady_state_start": 2.0,
}

_PROBLEM_KEYS = ("c", "k", "d", "f0", "omega", "sigma", "xg0", "omega_g", "weight_S", "control_walk_sigma", "inner_iterations", "alpha_control")


def _problem(p: dict) -> DuffingControlProblem:
    return DuffingControlProblem(weight_R=np.asarray(p["weight_R"], dtype=float), **{k: p[k] for k in _PROBLEM_KEYS})


def control_truth_fn(p: dict, seed: int) -> Truth:
    """The deterministic excitation; the plant itself is simulated inside each run."""
    prob = _problem(p)
    times = p["dt"] * np.arange(_n_steps(p) + 1)
    states = np.stack([prob.forcing(times), prob.base_acceleration(times)])
    return Truth(times, states, ["forcing", "base_acceleration"])


def _control_run(name: str, p: dict, truth: Truth, n_e: int, seed: int) -> FilterOutput:
    if name != "ekspf":
        raise ValueError(f"unknown filter {name!r}")
    cfg = FilterConfig(
        dt=p["dt"], initial_mean=[p["initial_control_mean"]], initial_cov_diag=[p["initial_control_var"]], n_e=n_e, seed=seed
    )
    tr = run_control(_problem(p), cfg, p["horizon"], redraw_per_iteration=bool(p["redraw_per_iteration"]))
    # no force acts after the horizon
    controls = np.append(tr.controls, np.nan)
    table = np.vstack([tr.states, tr.uncontrolled, controls])
    return FilterOutput(tr.times, table, ["x", "xdot", "x_uncontrolled", "xdot_uncontrolled", "control"])


def _control_rmse(p, truths, outs):
    zero = np.zeros_like(outs[0].table[:1])
    return {
        "controlled": rmse_over_runs([o.table[:1] for o in outs], zero),
        "uncontrolled": rmse_over_runs([o.table[2:3] for o in outs], zero),
    }


def control_ratio(times: np.ndarray, controlled: np.ndarray, uncontrolled: np.ndarray, start: float) -> float:
    """Steady-state RMS of the controlled displacement over that of its uncontrolled twin."""
    m = times > start
    return float(np.sqrt(np.mean(controlled[m] ** 2)) / np.sqrt(np.mean(uncontrolled[m] ** 2)))


def _control_summary(p, truths, outs) -> dict:
    ratios = [control_ratio(o.times, o.table[0], o.table[2], p["steady_state_start"]) for o in outs]
    return {"rms_ratio": {**_final(ratios), "steady_state_start": p["steady_state_start"]}}


# --- scalar OU with exponential intensity -----------------------------------

OU_DEFAULTS = {
    "dt": 0.01,
    "horizon": 10.0,
    "theta": 1.0,
    "sigma": 0.5,
    "rate_scale": 20.0,
    "rate_exponent": 0.5,
    "sir_ensemble": 10000,
}


def _ou_model(p: dict) -> tuple[ProcessModel, IntensityModel]:
    theta, sigma = p["theta"], p["sigma"]
    scale, expo = p["rate_scale"], p["rate_exponent"]
    model = ProcessModel(1, 1, lambda t, x: -theta * np.asarray(x), lambda t, x: np.array([[sigma]]))
    return model, IntensityModel(1, lambda t, x: scale * np.exp(expo * np.asarray(x)))


def stationary_std(p: dict) -> float:
    return p["sigma"] / np.sqrt(2 * p["theta"])


def ou_truth_fn(p: dict, seed: int) -> Truth:
    n, dt = _n_steps(p), p["dt"]
    rng = RandomSource(seed, STREAM_PROCESS).generator()
    x = np.empty(n + 1)
    x[0] = stationary_std(p) * rng.standard_normal()
    db = np.sqrt(dt) * rng.standard_normal(n)
    for i in range(n):
        x[i + 1] = x[i] - p["theta"] * x[i] * dt + p["sigma"] * db[i]
    grid = TimeGrid(0.0, dt, n)
    rates = p["rate_scale"] * np.exp(p["rate_exponent"] * x[1:])
    counts = simulate_counting_path(RandomSource(seed, STREAM_MEASUREMENT), rates[None, :], grid)
    return Truth(grid.times, x[None, :], ["x"], counts=counts)


def _ou_run(name: str, p: dict, truth: Truth, n_e: int, seed: int) -> FilterOutput:
    model, intensity = _ou_model(p)
    if name == "sir" and p.get("sir_ensemble"):
        n_e = int(p["sir_ensemble"])
    cfg = FilterConfig(dt=p["dt"], initial_mean=[0.0], initial_cov_diag=[stationary_std(p) ** 2], n_e=n_e, seed=seed)
    if name == "ekspf":
        traj = run_filter_poisson(cfg, truth.counts, model, intensity)
    elif name == "sir":
        traj = sir_run(cfg, truth.counts, model, intensity)
        return FilterOutput(traj.times, traj.estimates, ["x"], {"resample_count": traj.extras["resample_count"]})
    else:
        raise ValueError(f"unknown filter {name!r}")
    return FilterOutput(traj.times, traj.estimates, ["x"])


def _ou_summary(p, truths, outs) -> dict:
    std = stationary_std(p)
    err = [float(np.mean(np.abs(o.table[0] - t.states[0])) / std) for o, t in zip(outs, truths)]
    return {"normalised_error_vs_truth": _final(err)}


def oracle_gap(p: dict, ekspf: FilterOutput, sir: FilterOutput) -> float:
    """Time-averaged |EKSPF - SIR| in units of the stationary state std."""
    return float(np.mean(np.abs(ekspf.table[0] - sir.table[0])) / stationary_std(p))


def _ou_compare(p: dict, results: dict) -> dict:
    sir_labels = [lab for lab in results if lab.startswith("sir")]
    if not sir_labels:
        return {}
    oracle = results[sir_labels[0]]
    gaps = {}
    for lab, runs in results.items():
        if not lab.startswith("ekspf"):
            continue
        common = sorted(set(runs) & set(oracle))
        if common:
            gaps[lab] = _final([oracle_gap(p, runs[r], oracle[r]) for r in common])
    return {"oracle": sir_labels[0], "gap_vs_oracle": gaps}


EXPERIMENTS: dict[str, Experiment] = {
    "tracking": Experiment(
        "tracking",
        "manoeuvring target, bearing/range records, known initial position",
        TRACKING_DEFAULTS,
        ("ekspf", "ensrf", "sir"),
        True,
        tracking_truth_fn,
        _tracking_run,
        _group_rmse({"x": [0], "y": [2], "position": [0, 2]}),
        _tracking_summary,
    ),
    "tracking-faraway": Experiment(
        "tracking-faraway",
        "manoeuvring target, filters started away from the true position",
        {**TRACKING_DEFAULTS, "initial_offset": [3.0, 0.0, 3.0, 0.0]},
        ("ekspf", "ensrf", "sir"),
        True,
        tracking_truth_fn,
        _tracking_run,
        _group_rmse({"x": [0], "y": [2], "position": [0, 2]}),
        _tracking_summary,
    ),
    "tracking-circle": Experiment(
        "tracking-circle",
        "illustrative circular trajectory (radius and period are not from the source problem)",
        CIRCLE_DEFAULTS,
        ("ekspf", "ensrf", "sir"),
        True,
        circle_truth_fn,
        _tracking_run,
        _group_rmse({"x": [0], "y": [2], "position": [0, 2]}),
        _tracking_summary,
    ),
    "shear-frame": Experiment(
        "shear-frame",
        "5-storey shear frame: joint displacement/velocity/stiffness/damping estimation from Poisson counts",
        SHEAR_DEFAULTS,
        ("ekspf", "ensrf", "sir"),
        False,
        shear_truth_fn,
        _shear_run,
        _shear_rmse,
        _shear_summary,
    ),
    "duffing-control": Experiment(
        "duffing-control",
        "instantaneous control of a base-excited Duffing oscillator",
        CONTROL_DEFAULTS,
        ("ekspf",),
        True,
        control_truth_fn,
        _control_run,
        _control_rmse,
        _control_summary,
    ),
    "ou-validation": Experiment(
        "ou-validation",
        "scalar OU state with exponential intensity; SIR with a large ensemble is the oracle",
        OU_DEFAULTS,
        ("ekspf", "sir"),
        False,
        ou_truth_fn,
        _ou_run,
        _group_rmse({"x": [0]}),
        _ou_summary,
        _ou_compare,
    ),
}


def generate_truth(experiment: str, seed: int, params: dict | None = None) -> Truth:
    """Truth trajectory and measurement records; deterministic in ``seed``."""
    exp = EXPERIMENTS[experiment]
    p = dict(exp.defaults)
    if params:
        unknown = sorted(set(params) - set(p))
        if unknown:
            raise ValueError(f"unknown parameters for {experiment}: {unknown}")
        p.update(params)
    return exp.truth(p, seed)
