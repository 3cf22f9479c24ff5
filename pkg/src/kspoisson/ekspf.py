"""Ensemble Kushner-Stratonovich-Poisson filter.

Particles are propagated by Euler-Maruyama and corrected additively by a gain
built from intensity-weighted ensemble means. Nothing is ever resampled, so
the ensemble size is constant through a run. The same predict/gain/update
machinery also drives an instantaneous controller (``run_control``).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import (
    DuffingControlProblem,
    IntensityModel,
    MeasurementOperator,
    ProcessModel,
    VirtualIntensity,
    duffing_drift,
    performance_index,
)
from .stochastic import (
    STREAM_COUNTING,
    STREAM_INITIAL,
    STREAM_PARTICLES,
    STREAM_PROCESS,
    CountingPath,
    RandomSource,
    TimeGrid,
    counting_increments,
    simulate_counting_path,
)


class NumericalError(ArithmeticError):
    """Non-finite model output; carries the offending particle and step when known."""

    def __init__(self, message: str, particle: int | None = None, step: int | None = None):
        self.reason = message
        self.particle = particle
        self.step = step
        where = []
        if step is not None:
            where.append(f"step {step}")
        if particle is not None:
            where.append(f"particle {particle}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))

    def at_step(self, step: int) -> "NumericalError":
        return NumericalError(self.reason, self.particle, step)


class ModelContractError(ValueError):
    """A model returned values outside its declared range."""


@dataclass(frozen=True)
class Ensemble:
    t: float
    particles: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim != 2:
            raise ValueError(f"particles must be (n_x, n_e), got shape {p.shape}")
        if p.shape[1] < 2:
            raise ValueError("an ensemble needs at least two particles")
        if not np.all(np.isfinite(p)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(p), axis=0))[0])
            raise NumericalError("non-finite particle", particle=bad)
        object.__setattr__(self, "particles", p)

    @property
    def n_x(self) -> int:
        return self.particles.shape[0]

    @property
    def n_e(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class Gain:
    g: np.ndarray
    # channels whose intensities were all zero; their columns are zeroed
    degenerate: np.ndarray


@dataclass(frozen=True)
class FilterConfig:
    dt: float
    initial_mean: np.ndarray
    initial_cov_diag: np.ndarray
    n_e: int = 200
    include_dt_in_innovation: bool = True
    seed: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.initial_mean, dtype=float))
        cov = np.broadcast_to(np.asarray(self.initial_cov_diag, dtype=float), mean.shape).copy()
        if self.n_e < 2:
            raise ValueError("n_e must be >= 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if np.any(cov < 0):
            raise ValueError("initial_cov_diag must be non-negative")
        object.__setattr__(self, "initial_mean", mean)
        object.__setattr__(self, "initial_cov_diag", cov)


@dataclass
class FilterTrajectory:
    """Estimates on the grid, ``t0`` included (column 0 is the initial mean)."""

    times: np.ndarray
    estimates: np.ndarray
    gains: np.ndarray | None = None
    innovation_means: np.ndarray | None = None
    degenerate_steps: int = 0
    extras: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path | None = None, prefix: str = "xhat") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"{prefix}_{k}" for k in range(self.estimates.shape[0])])
        for i, t in enumerate(self.times):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in self.estimates[:, i]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def diagnostics_csv(self, path: str | Path | None = None) -> str:
        """Per-step gain Frobenius norms and mean innovations per channel."""
        if self.gains is None or self.innovation_means is None:
            raise ValueError("trajectory was run without diagnostics")
        n_y = self.innovation_means.shape[0]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "gain_norm"] + [f"innov_{l}" for l in range(n_y)])
        for i, t in enumerate(self.times[1:]):
            row = [f"{t:.17g}", f"{np.linalg.norm(self.gains[i]):.17g}"]
            row += [f"{v:.17g}" for v in self.innovation_means[:, i]]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def init_ensemble(config: FilterConfig, source: RandomSource) -> Ensemble:
    rng = source.generator()
    n_x = config.initial_mean.shape[0]
    z = rng.standard_normal((n_x, config.n_e))
    particles = config.initial_mean[:, None] + np.sqrt(config.initial_cov_diag)[:, None] * z
    return Ensemble(0.0, particles)


def _first_bad_column(a: np.ndarray) -> int | None:
    finite = np.isfinite(a).reshape(-1, a.shape[-1]).all(axis=0)
    return None if finite.all() else int(np.flatnonzero(~finite)[0])


def predict(ens: Ensemble, model: ProcessModel, dt: float, source: RandomSource) -> Ensemble:
    """One Euler-Maruyama step for every particle.

    Drift and diffusion are evaluated at the new time with the old state.
    Particle ``j`` uses column ``j`` of an ``(n_b, n_e)`` normal draw.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = ens.particles
    t_next = ens.t + dt
    mu = np.asarray(model.drift(t_next, x), dtype=float)
    mu = np.broadcast_to(mu.reshape(mu.shape[0], -1), x.shape)
    bad = _first_bad_column(mu)
    if bad is not None:
        raise NumericalError("non-finite drift", particle=bad)
    sig = np.asarray(model.diffusion(t_next, x), dtype=float)
    if sig.ndim == 3:
        bad = _first_bad_column(sig)
    elif not np.all(np.isfinite(sig)):
        bad = 0
    if bad is not None:
        raise NumericalError("non-finite diffusion", particle=bad)
    db = np.sqrt(dt) * source.generator().standard_normal((model.n_b, ens.n_e))
    noise = sig @ db if sig.ndim == 2 else np.einsum("ibj,bj->ij", sig, db)
    out = x + mu * dt + noise
    bad = _first_bad_column(out)
    if bad is not None:
        raise NumericalError("non-finite predicted particle", particle=bad)
    return Ensemble(t_next, out)


def evaluate_intensities(ens: Ensemble, intensity: IntensityModel | VirtualIntensity) -> np.ndarray:
    """Rates of every channel at every particle, shape ``(n_y, n_e)``."""
    lam = np.asarray(intensity.rate(ens.t, ens.particles), dtype=float)
    lam = np.broadcast_to(lam.reshape(intensity.n_y, -1), (intensity.n_y, ens.n_e)).copy()
    bad = _first_bad_column(lam)
    if bad is not None:
        raise NumericalError("non-finite intensity", particle=bad)
    if np.any(lam < 0):
        l, j = np.argwhere(lam < 0)[0]
        raise ModelContractError(f"negative intensity {lam[l, j]} on channel {l} at particle {j}")
    return lam


def compute_gain(ens: Ensemble, intensities: np.ndarray) -> Gain:
    """Intensity-weighted particle mean minus plain mean, one column per channel."""
    x = ens.particles
    lam = np.asarray(intensities, dtype=float)
    total = lam.sum(axis=1)
    degenerate = ~(total > 0)
    safe = np.where(degenerate, 1.0, total)
    weighted = (x @ lam.T) / safe
    g = weighted - x.mean(axis=1, keepdims=True)
    g[:, degenerate] = 0.0
    return Gain(g, degenerate)


def update(
    ens: Ensemble,
    gain: Gain,
    delta_y: np.ndarray,
    intensities: np.ndarray,
    dt: float,
    include_dt: bool = True,
) -> Ensemble:
    """Additive particle-wise correction ``G (dY - lambda_j dt)``.

    With ``include_dt=False`` the rate is subtracted without the ``dt``
    factor.
    """
    delta_y = np.asarray(delta_y, dtype=float).reshape(-1)
    lam = np.asarray(intensities, dtype=float)
    n_x, n_y = gain.g.shape
    if n_x != ens.n_x or delta_y.shape[0] != n_y or lam.shape != (n_y, ens.n_e):
        raise ValueError(
            f"dimension mismatch: gain {gain.g.shape}, delta_y {delta_y.shape}, "
            f"intensities {lam.shape}, ensemble ({ens.n_x}, {ens.n_e})"
        )
    if np.any(delta_y < 0):
        raise ValueError("counting increments must be non-negative")
    innovation = delta_y[:, None] - (lam * dt if include_dt else lam)
    return Ensemble(ens.t, ens.particles + gain.g @ innovation)


def estimate(ens: Ensemble) -> np.ndarray:
    return ens.particles.mean(axis=1)


def _check_grid(config: FilterConfig, grid: TimeGrid) -> None:
    if not np.isclose(grid.dt, config.dt, rtol=1e-12, atol=0.0):
        raise ValueError(f"measurement grid dt {grid.dt} differs from filter dt {config.dt}")


def _run_loop(config, grid, delta_y, model, intensity, diagnostics):
    source = RandomSource(config.seed, STREAM_PARTICLES)
    ens = init_ensemble(config, RandomSource(config.seed, STREAM_INITIAL))
    ens = Ensemble(grid.t0, ens.particles)
    n = grid.n_steps
    est = np.empty((ens.n_x, n + 1))
    est[:, 0] = estimate(ens)
    gains = np.empty((n, ens.n_x, intensity.n_y)) if diagnostics else None
    innov = np.empty((intensity.n_y, n)) if diagnostics else None
    degenerate_steps = 0
    for i in range(n):
        try:
            ens = predict(ens, model, config.dt, source.child(i))
            lam = evaluate_intensities(ens, intensity)
            gain = compute_gain(ens, lam)
            ens = update(ens, gain, delta_y[:, i], lam, config.dt, config.include_dt_in_innovation)
        except NumericalError as exc:
            raise exc.at_step(i + 1) from exc
        degenerate_steps += int(gain.degenerate.any())
        est[:, i + 1] = estimate(ens)
        if diagnostics:
            gains[i] = gain.g
            scale = config.dt if config.include_dt_in_innovation else 1.0
            innov[:, i] = delta_y[:, i] - lam.mean(axis=1) * scale
    return FilterTrajectory(grid.times, est, gains, innov, degenerate_steps)


def run_filter_poisson(
    config: FilterConfig,
    measurements: CountingPath,
    model: ProcessModel,
    intensity: IntensityModel | VirtualIntensity,
    diagnostics: bool = False,
) -> FilterTrajectory:
    """Filter a counting record: predict, weigh, correct and average at every step."""
    _check_grid(config, measurements.grid)
    if measurements.n_y != intensity.n_y:
        raise ValueError(f"record has {measurements.n_y} channels, intensity model {intensity.n_y}")
    return _run_loop(config, measurements.grid, counting_increments(measurements), model, intensity, diagnostics)


def make_virtual_measurements(
    records: np.ndarray, alpha: np.ndarray, grid: TimeGrid, source: RandomSource
) -> CountingPath:
    """Counting path with rates ``alpha_l |M^l|``; ``records[:, i]`` is the measurement at ``t_{i+1}``."""
    records = np.atleast_2d(np.asarray(records, dtype=float))
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (records.shape[0],))
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    return simulate_counting_path(source, alpha[:, None] * np.abs(records), grid)


def run_filter_diffusion(
    config: FilterConfig,
    records: np.ndarray,
    model: ProcessModel,
    op: MeasurementOperator,
    alpha: np.ndarray,
    t0: float = 0.0,
    diagnostics: bool = False,
) -> FilterTrajectory:
    """Filter diffusion-type records through virtual Poisson measurements.

    The virtual counting path is drawn once, from the ``STREAM_COUNTING``
    stream of ``config.seed``, and then filtered with rates
    ``alpha * |op(t, x)|``.
    """
    records = np.atleast_2d(np.asarray(records, dtype=float))
    if records.shape[0] != op.n_m:
        raise ValueError(f"records have {records.shape[0]} rows, operator expects {op.n_m}")
    grid = TimeGrid(t0, config.dt, records.shape[1])
    path = make_virtual_measurements(records, alpha, grid, RandomSource(config.seed, STREAM_COUNTING))
    traj = run_filter_poisson(config, path, model, VirtualIntensity(alpha, op), diagnostics)
    traj.extras["virtual_counts"] = path
    return traj


# --- instantaneous control --------------------------------------------------
#
# The control force is the hidden state. Each candidate force gets a virtual
# rate alpha * J from a quadratic performance index, and a Poisson record
# drawn at rate alpha * min_j J acts as the measurement.

_MAX_EXPECTED_COUNT = 1e15


@dataclass
class ControlTrajectory:
    times: np.ndarray
    controls: np.ndarray  # applied force on each interval, (n_steps,)
    states: np.ndarray  # controlled plant [X, Xdot], (2, n_steps + 1)
    uncontrolled: np.ndarray  # same noise, zero control, (2, n_steps + 1)
    forcing: np.ndarray  # external force at each interval start, (n_steps,)


def plant_step(x: np.ndarray, u, t: float, dt: float, problem: DuffingControlProblem, db=0.0) -> np.ndarray:
    """Euler-Maruyama step of the oscillator; ``db`` is the Brownian increment."""
    out = np.asarray(x, dtype=float) + duffing_drift(x, u, t, problem) * dt
    out[1] = out[1] + problem.sigma * db
    return out


def run_control(
    problem: DuffingControlProblem,
    config: FilterConfig,
    horizon: float,
    source: RandomSource | None = None,
    redraw_per_iteration: bool = True,
) -> ControlTrajectory:
    """Estimate and apply the control force step by step.

    ``config.initial_mean`` / ``initial_cov_diag`` describe the starting
    control ensemble (one component). Candidate forces are scored by the
    index of the plant one deterministic Euler step ahead. With
    ``redraw_per_iteration=False`` each time step draws its Poisson
    increment once and reuses it across the inner iterations.
    """
    seed = config.seed if source is None else source.seed
    dt = config.dt
    n_steps = int(round(horizon / dt))
    init_rng = RandomSource(seed, STREAM_INITIAL).generator()
    u_ens = config.initial_mean[0] + np.sqrt(config.initial_cov_diag[0]) * init_rng.standard_normal(config.n_e)
    walk = RandomSource(seed, STREAM_PARTICLES)
    counting = RandomSource(seed, STREAM_COUNTING)
    plant_noise = np.sqrt(dt) * RandomSource(seed, STREAM_PROCESS).generator().standard_normal(n_steps)
    alpha = problem.alpha_control
    one_step = TimeGrid(0.0, dt, 1)

    x = np.asarray(problem.x0, dtype=float).copy()
    x_free = x.copy()
    states = np.empty((2, n_steps + 1))
    free = np.empty((2, n_steps + 1))
    states[:, 0] = x
    free[:, 0] = x_free
    controls = np.empty(n_steps)
    forcing = np.empty(n_steps)
    for i in range(n_steps):
        t = i * dt
        u_ens = u_ens + problem.control_walk_sigma * np.sqrt(dt) * walk.child(i).generator().standard_normal(config.n_e)
        dy = None
        for k in range(problem.inner_iterations):
            look = plant_step(np.repeat(x[:, None], config.n_e, axis=1), u_ens, t, dt, problem)
            j_vals = performance_index(look, u_ens, problem.weight_R, problem.weight_S)
            lam = alpha * np.abs(j_vals)[None, :]
            # a runaway ensemble overflows the Poisson sampler long before inf
            if not np.all(np.isfinite(lam)) or lam.min() * dt > _MAX_EXPECTED_COUNT:
                raise NumericalError("control ensemble diverged", step=i + 1)
            if dy is None or redraw_per_iteration:
                target = np.array([[alpha * j_vals.min()]])
                dy = counting_increments(simulate_counting_path(counting.child(i).child(k), target, one_step))[:, 0]
            ens = Ensemble(t, u_ens[None, :])
            gain = compute_gain(ens, lam)
            u_ens = update(ens, gain, dy, lam, dt, config.include_dt_in_innovation).particles[0]
        u = u_ens.mean()
        controls[i] = u
        forcing[i] = problem.forcing(t)
        x = plant_step(x, u, t, dt, problem, plant_noise[i])
        x_free = plant_step(x_free, 0.0, t, dt, problem, plant_noise[i])
        states[:, i + 1] = x
        free[:, i + 1] = x_free
    return ControlTrajectory(dt * np.arange(n_steps + 1), controls, states, free, forcing)
