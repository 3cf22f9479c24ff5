"""Fast in-process invariant and oracle checks behind ``kspoisson validate``."""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from ..baselines import LinearGaussianModel, ensrf_step, kalman_step
from ..ekspf import Ensemble, compute_gain, estimate, update
from ..models import MeasurementOperator
from ..stochastic import RandomSource, TimeGrid, simulate_counting_path
from .config import ExperimentConfig
from .metrics import rmse_over_runs
from .runner import run_experiment


def _constant_intensity_gain():
    rng = np.random.default_rng(0)
    ens = Ensemble(0.0, rng.standard_normal((3, 50)) * 10)
    g = compute_gain(ens, np.full((2, 50), 7.5)).g
    rel = np.abs(g).max() / np.abs(ens.particles).max()
    return rel <= 1e-12, f"max |G| / max |x| = {rel:.2e}"


def _mean_shift_identity():
    rng = np.random.default_rng(1)
    ens = Ensemble(0.0, rng.standard_normal((2, 40)))
    lam = np.exp(ens.particles[:1])
    gain = compute_gain(ens, lam)
    dy, dt = np.array([3.0]), 0.01
    lhs = estimate(update(ens, gain, dy, lam, dt)) - estimate(ens)
    rhs = gain.g @ (dy - lam.mean(axis=1) * dt)
    err = np.abs(lhs - rhs).max()
    return err <= 1e-12, f"max deviation {err:.2e}"


def _poisson_mean():
    grid = TimeGrid(0.0, 0.01, 100)
    finals = [
        simulate_counting_path(RandomSource(s, 5), np.full(100, 10.0), grid).counts[0, -1] for s in range(200)
    ]
    m = float(np.mean(finals))
    return abs(m - 10.0) <= 5 * np.sqrt(10.0 / 200), f"mean final count {m:.3f} (expected 10)"


def _rmse_permutation():
    rng = np.random.default_rng(2)
    truth = rng.standard_normal((3, 20))
    runs = [truth + rng.standard_normal((3, 20)) for _ in range(5)]
    a = rmse_over_runs(runs, truth, [0, 2])
    b = rmse_over_runs(runs[::-1], truth, [0, 2])
    return np.allclose(a, b, rtol=1e-14, atol=0), "reversed run order"


def _ensrf_matches_kalman():
    rng = np.random.default_rng(3)
    n_x, n_m, n_e = 4, 2, 30
    x = rng.standard_normal((n_x, n_e))
    h = rng.standard_normal((n_m, n_x))
    r_std = np.array([0.3, 0.7])
    obs = rng.standard_normal(n_m)
    post = ensrf_step(Ensemble(0.0, x), obs, MeasurementOperator(n_m, lambda t, s: h @ s, r_std))
    mean, cov = x.mean(axis=1), np.cov(x)
    lg = LinearGaussianModel(np.eye(n_x), np.zeros((n_x, n_x)), h, np.diag(r_std**2))
    m_kf, p_kf = kalman_step(mean, cov, lg, obs)
    err = max(np.abs(post.particles.mean(axis=1) - m_kf).max(), np.abs(np.cov(post.particles) - p_kf).max())
    return err <= 1e-8, f"max moment deviation {err:.2e}"


def _config_round_trip():
    cfg = ExperimentConfig("shear-frame", seed=7, n_runs=3, ensemble_sizes=[50, 100], overrides={"alpha": 1e5})
    back = ExperimentConfig.from_json(cfg.to_json())
    return back == cfg, "JSON reload equals original"


def _determinism():
    cfg = dict(experiment="ou-validation", seed=11, n_runs=1, overrides={"horizon": 1.0, "sir_ensemble": 500})
    with tempfile.TemporaryDirectory() as tmp:
        digests = []
        for name in ("a", "b"):
            out = Path(tmp) / name
            run_experiment(ExperimentConfig(**cfg, out_dir=str(out)))
            digests.append({p.relative_to(out).as_posix(): p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "config.json"})
    return digests[0] == digests[1], f"{len(digests[0])} files compared"


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("constant intensity gives zero gain", _constant_intensity_gain),
    ("update mean-shift identity", _mean_shift_identity),
    ("Poisson generator mean", _poisson_mean),
    ("RMSE invariant under run order", _rmse_permutation),
    ("square-root EnKF matches Kalman", _ensrf_matches_kalman),
    ("config JSON round trip", _config_round_trip),
    ("artifact determinism", _determinism),
]


def run_checks() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
