"""Reference filters: exact Kalman, SIR with Poisson likelihood, deterministic square-root EnKF."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .ekspf import Ensemble, FilterConfig, FilterTrajectory, NumericalError, _check_grid, evaluate_intensities
from .ekspf import init_ensemble, predict
from .models import IntensityModel, MeasurementOperator, ProcessModel, VirtualIntensity
from .stochastic import STREAM_INITIAL, STREAM_PARTICLES, CountingPath, RandomSource, counting_increments

STREAM_RESAMPLE = 6


class FilterDegeneracyError(RuntimeError):
    """Every particle has zero likelihood."""


# --- Kalman ---------------------------------------------------------------


@dataclass(frozen=True)
class LinearGaussianModel:
    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R_obs: np.ndarray

    def __post_init__(self):
        for name in ("F", "Q", "H", "R_obs"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("Q", "R_obs"):
            m = getattr(self, name)
            if not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() < -1e-10 * max(1.0, np.abs(m).max()):
                raise ValueError(f"{name} must be symmetric positive semi-definite")


def kalman_step(mean, cov, model: LinearGaussianModel, obs) -> tuple[np.ndarray, np.ndarray]:
    """Predict with (F, Q), then update on ``obs``; Joseph form keeps the covariance PSD."""
    m = model.F @ np.atleast_1d(np.asarray(mean, dtype=float))
    p = model.F @ np.atleast_2d(cov) @ model.F.T + model.Q
    h = model.H
    s = h @ p @ h.T + model.R_obs
    try:
        if np.linalg.cond(s) > 1e14:
            raise np.linalg.LinAlgError
        k = np.linalg.solve(s, h @ p).T
    except np.linalg.LinAlgError:
        raise NumericalError("singular innovation covariance") from None
    m = m + k @ (np.atleast_1d(obs) - h @ m)
    a = np.eye(len(m)) - k @ h
    p = a @ p @ a.T + k @ model.R_obs @ k.T
    return m, 0.5 * (p + p.T)


def kalman_filter(mean0, cov0, model: LinearGaussianModel, observations: np.ndarray) -> np.ndarray:
    """Means at every grid point, ``observations[:, i]`` taken at step ``i + 1``."""
    obs = np.atleast_2d(observations)
    m, p = np.atleast_1d(np.asarray(mean0, dtype=float)), np.atleast_2d(cov0)
    out = np.empty((len(m), obs.shape[1] + 1))
    out[:, 0] = m
    for i in range(obs.shape[1]):
        m, p = kalman_step(m, p, model, obs[:, i])
        out[:, i + 1] = m
    return out


# --- SIR with Poisson likelihood -------------------------------------------


@dataclass(frozen=True)
class WeightedEnsemble:
    particles: np.ndarray
    log_weights: np.ndarray
    resampled: bool = False

    @property
    def n_e(self) -> int:
        return self.particles.shape[1]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    def mean(self) -> np.ndarray:
        return self.particles @ self.weights


def poisson_log_likelihood(delta_y: np.ndarray, intensities: np.ndarray, dt: float) -> np.ndarray:
    """Per-particle log pmf of the increments, up to a particle-independent constant."""
    dy = np.asarray(delta_y, dtype=float).reshape(-1, 1)
    rate = np.asarray(intensities, dtype=float) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rate = np.log(rate)
        # 0 * log 0 = 0: a silent channel is certain under a zero rate
        term = np.where(dy > 0, dy * log_rate, 0.0) - rate
    return term.sum(axis=0)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions)


def sir_poisson_step(
    we: WeightedEnsemble,
    delta_y: np.ndarray,
    intensities: np.ndarray,
    dt: float,
    ess_threshold: float = 0.5,
    source: RandomSource | None = None,
) -> WeightedEnsemble:
    """Reweight by the Poisson likelihood of ``delta_y``; resample when ESS drops.

    Returned log-weights are normalised (``logsumexp == 0``).
    """
    logw = we.log_weights + poisson_log_likelihood(delta_y, intensities, dt)
    top = logw.max()
    if not np.isfinite(top):
        raise FilterDegeneracyError("all particles have zero likelihood")
    logw = logw - (top + np.log(np.exp(logw - top).sum()))
    w = np.exp(logw)
    ess = 1.0 / np.sum(w**2)
    particles = we.particles
    if ess < ess_threshold * we.n_e:
        if source is None:
            raise ValueError("resampling needs a random source")
        idx = systematic_resample(w, source.generator())
        particles = particles[:, idx]
        logw = np.full(we.n_e, -np.log(we.n_e))
        return WeightedEnsemble(particles, logw, resampled=True)
    return WeightedEnsemble(particles, logw)


def sir_run(
    config: FilterConfig,
    measurements: CountingPath,
    model: ProcessModel,
    intensity: IntensityModel | VirtualIntensity,
    ess_threshold: float = 0.5,
) -> FilterTrajectory:
    """Bootstrap particle filter on a counting record; estimates are weighted means."""
    _check_grid(config, measurements.grid)
    grid = measurements.grid
    dy = counting_increments(measurements)
    ens = init_ensemble(config, RandomSource(config.seed, STREAM_INITIAL))
    ens = Ensemble(grid.t0, ens.particles)
    we = WeightedEnsemble(ens.particles, np.full(config.n_e, -np.log(config.n_e)))
    prop = RandomSource(config.seed, STREAM_PARTICLES)
    resample = RandomSource(config.seed, STREAM_RESAMPLE)
    est = np.empty((ens.n_x, grid.n_steps + 1))
    est[:, 0] = we.mean()
    n_resampled = 0
    for i in range(grid.n_steps):
        try:
            ens = predict(Ensemble(ens.t, we.particles), model, config.dt, prop.child(i))
            lam = evaluate_intensities(ens, intensity)
        except NumericalError as exc:
            raise exc.at_step(i + 1) from exc
        we = sir_poisson_step(
            WeightedEnsemble(ens.particles, we.log_weights), dy[:, i], lam, config.dt, ess_threshold, resample.child(i)
        )
        n_resampled += we.resampled
        est[:, i + 1] = we.mean()
    traj = FilterTrajectory(grid.times, est)
    traj.extras["resample_count"] = n_resampled
    return traj


# --- deterministic ensemble square-root filter ------------------------------


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def ensrf_step(ens: Ensemble, obs: np.ndarray, op: MeasurementOperator) -> Ensemble:
    """Deterministic square-root analysis with a symmetric transform.

    The mean moves by the ensemble Kalman gain. Anomalies are multiplied by
    ``(I - S^T (S S^T + (n-1) R)^-1 S)^{1/2}`` so their sample covariance is
    ``(I - K H) P`` without perturbing observations.
    """
    x = ens.particles
    n = ens.n_e
    y = np.atleast_2d(np.asarray(op.observe(ens.t, x), dtype=float)).reshape(op.n_m, n)
    xm = x.mean(axis=1, keepdims=True)
    ym = y.mean(axis=1, keepdims=True)
    a = x - xm
    s = y - ym
    c = s @ s.T + (n - 1) * np.diag(op.noise_std**2)
    try:
        if np.linalg.cond(c) > 1e14:
            raise np.linalg.LinAlgError
        c_inv_s = np.linalg.solve(c, s)
        c_inv_d = np.linalg.solve(c, np.asarray(obs, dtype=float).reshape(-1, 1) - ym)
    except np.linalg.LinAlgError:
        raise NumericalError("singular innovation covariance") from None
    new_mean = xm + a @ (s.T @ c_inv_d)
    transform = _sqrt_psd(np.eye(n) - s.T @ c_inv_s)
    return Ensemble(ens.t, new_mean + a @ transform)


def ensrf_run(
    config: FilterConfig,
    records: np.ndarray,
    model: ProcessModel,
    op: MeasurementOperator,
    noise_std_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    t0: float = 0.0,
) -> FilterTrajectory:
    """Predict/analyse loop; ``noise_std_fn(obs)`` overrides the operator noise per step."""
    records = np.atleast_2d(np.asarray(records, dtype=float))
    ens = init_ensemble(config, RandomSource(config.seed, STREAM_INITIAL))
    ens = Ensemble(t0, ens.particles)
    prop = RandomSource(config.seed, STREAM_PARTICLES)
    n = records.shape[1]
    est = np.empty((ens.n_x, n + 1))
    est[:, 0] = ens.particles.mean(axis=1)
    for i in range(n):
        try:
            ens = predict(ens, model, config.dt, prop.child(i))
            step_op = op if noise_std_fn is None else replace(op, noise_std=noise_std_fn(records[:, i]))
            ens = ensrf_step(ens, records[:, i], step_op)
        except NumericalError as exc:
            raise exc.at_step(i + 1) from exc
        est[:, i + 1] = ens.particles.mean(axis=1)
    return FilterTrajectory(t0 + config.dt * np.arange(n + 1), est)
