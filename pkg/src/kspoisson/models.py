"""Process, intensity and measurement models, plus the builtin benchmarks.

State arguments follow one convention throughout: a single state is an
``(n_x,)`` array and an ensemble is ``(n_x, n_e)`` with particles in
columns. Model callables accept either and return the matching trailing
shape, so the filters can evaluate a whole ensemble in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class ProcessModel:
    """dX = drift(t, X) dt + diffusion(t, X) dB.

    ``diffusion`` returns either a state-independent ``(n_x, n_b)`` matrix or
    a per-particle ``(n_x, n_b, n_e)`` stack.
    """

    n_x: int
    n_b: int
    drift: Callable[[float, Array], Array]
    diffusion: Callable[[float, Array], Array]


@dataclass(frozen=True)
class IntensityModel:
    n_y: int
    rate: Callable[[float, Array], Array]


@dataclass(frozen=True)
class MeasurementOperator:
    n_m: int
    observe: Callable[[float, Array], Array]
    noise_std: Array

    def __post_init__(self):
        std = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (self.n_m,)).copy()
        if np.any(std < 0):
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "noise_std", std)


@dataclass(frozen=True)
class VirtualIntensity:
    """Rates ``alpha * |observe(t, x)|`` for virtual Poisson measurements."""

    alpha: Array
    op: MeasurementOperator

    def __post_init__(self):
        alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (self.op.n_m,)).copy()
        if np.any(alpha <= 0):
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_y(self) -> int:
        return self.op.n_m

    def rate(self, t: float, x: Array) -> Array:
        m = np.asarray(self.op.observe(t, x), dtype=float)
        scale = self.alpha.reshape((-1,) + (1,) * (m.ndim - 1))
        return scale * np.abs(m)


# --- target tracking -------------------------------------------------------


def cv_matrices(dt: float) -> tuple[Array, Array]:
    """Constant-velocity transition and acceleration-input matrices for [x, vx, y, vy]."""
    upsilon = np.array([[1.0, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]])
    gamma = np.array([[0.5 * dt**2, 0], [dt, 0], [0, 0.5 * dt**2], [0, dt]])
    return upsilon, gamma


def cv_transition(state: Array, accel: Array, dt: float) -> Array:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    upsilon, gamma = cv_matrices(dt)
    return upsilon @ np.asarray(state, dtype=float) + gamma @ np.asarray(accel, dtype=float)


def _bearing_range(x: Array, origin: Array) -> Array:
    dx = x[0] - origin[0]
    dy = x[2] - origin[1]
    return np.stack([np.arctan2(dy, dx), np.hypot(dx, dy)])


def bearing_range(state: Array, origin: Array = (0.0, 0.0)) -> Array:
    """[bearing (rad), range (m)] of a target seen from ``origin``."""
    state = np.asarray(state, dtype=float)
    origin = np.asarray(origin, dtype=float)
    if state[0] == origin[0] and state[2] == origin[1]:
        raise ValueError("bearing is undefined for a target at the sensor origin")
    return _bearing_range(state, origin)


def bearing_range_operator(origin=(0.0, 0.0), noise_std=(0.0, 0.0)) -> MeasurementOperator:
    origin = np.asarray(origin, dtype=float)
    return MeasurementOperator(2, lambda t, x: _bearing_range(x, origin), np.asarray(noise_std, dtype=float))


@dataclass(frozen=True)
class TrackingScenario:
    x0: Array = field(default_factory=lambda: np.array([0.5, 3.0, 1.0, 1.0]))
    manoeuvre_times: tuple[float, ...] = (20.0, 30.0, 60.0, 80.0)
    manoeuvre_accels: tuple[tuple[float, float], ...] = (
        (-40.0, 40.0),
        (25.0, -25.0),
        (25.0, -25.0),
        (-60.0, 60.0),
    )
    accel_intensity: float = 0.1
    manoeuvre_intensity: float = 100.0
    sensor_origin: Array = field(default_factory=lambda: np.zeros(2))
    horizon: float = 100.0

    def __post_init__(self):
        times = list(self.manoeuvre_times)
        if len(times) != len(self.manoeuvre_accels):
            raise ValueError("manoeuvre_times and manoeuvre_accels differ in length")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("manoeuvre_times must be strictly increasing")
        if any(t >= self.horizon for t in times):
            raise ValueError("manoeuvre_times must precede the horizon")


def tracking_truth(scenario: TrackingScenario, dt: float) -> tuple[Array, Array]:
    """Noise-free manoeuvring trajectory.

    Each manoeuvre acceleration acts for exactly one sampling interval,
    starting at the grid point nearest its scheduled time.

    Returns
    -------
    times : (n_steps + 1,)
    states : (4, n_steps + 1)
    """
    n_steps = int(round(scenario.horizon / dt))
    accels = np.zeros((2, n_steps))
    for t_m, a_m in zip(scenario.manoeuvre_times, scenario.manoeuvre_accels):
        accels[:, int(round(t_m / dt))] += a_m
    states = np.empty((4, n_steps + 1))
    states[:, 0] = scenario.x0
    for i in range(n_steps):
        states[:, i + 1] = cv_transition(states[:, i], accels[:, i], dt)
    return dt * np.arange(n_steps + 1), states


def circle_truth(center=(100.0, 100.0), radius=50.0, period=60.0, horizon=100.0, dt=0.1) -> tuple[Array, Array]:
    n_steps = int(round(horizon / dt))
    t = dt * np.arange(n_steps + 1)
    w = 2 * np.pi / period
    states = np.stack(
        [
            center[0] + radius * np.cos(w * t),
            -radius * w * np.sin(w * t),
            center[1] + radius * np.sin(w * t),
            radius * w * np.cos(w * t),
        ]
    )
    return t, states


def tracking_process_model(scenario: TrackingScenario, dt: float) -> ProcessModel:
    """Constant-velocity SDE whose Euler step reproduces ``cv_transition``.

    The random acceleration ``a + m`` is Gaussian per step with standard
    deviation ``hypot(accel_intensity, manoeuvre_intensity)``.
    """
    _, gamma = cv_matrices(dt)
    sigma = np.hypot(scenario.accel_intensity, scenario.manoeuvre_intensity)
    # EM adds diffusion @ dB with dB ~ N(0, dt); rescale so the step is gamma @ N(0, sigma^2)
    diffusion = gamma * sigma / np.sqrt(dt)

    def drift(t, x):
        return np.stack([x[1], np.zeros_like(x[1]), x[3], np.zeros_like(x[3])])

    return ProcessModel(4, 2, drift, lambda t, x: diffusion)


# --- shear frame -----------------------------------------------------------


@dataclass(frozen=True)
class ShearFrameParams:
    n_floors: int = 5
    k_true: Array = field(default_factory=lambda: np.full(5, 100.0))
    c_true: Array = field(default_factory=lambda: np.full(5, 5.0))
    f0: float = 30.0
    omega: float = 1.0
    sigma_diag: float = 0.01

    def __post_init__(self):
        k = np.broadcast_to(np.asarray(self.k_true, dtype=float), (self.n_floors,)).copy()
        c = np.broadcast_to(np.asarray(self.c_true, dtype=float), (self.n_floors,)).copy()
        if np.any(k <= 0) or np.any(c <= 0):
            raise ValueError("floor stiffness and damping must be positive")
        object.__setattr__(self, "k_true", k)
        object.__setattr__(self, "c_true", c)

    def forcing(self, t: float) -> float:
        return self.f0 * np.cos(self.omega * t)


def shear_matrix(coeffs: Array) -> Array:
    """Tridiagonal shear-building matrix for per-floor coefficients."""
    c = np.asarray(coeffs, dtype=float)
    upper = np.append(c[1:], 0.0)
    m = np.diag(c + upper)
    m -= np.diag(c[1:], 1) + np.diag(c[1:], -1)
    return m


def shear_apply(coeffs: Array, v: Array) -> Array:
    """``shear_matrix(coeffs) @ v`` column-wise without forming the matrix.

    ``coeffs`` and ``v`` are ``(n,)`` or ``(n, n_e)``.
    """
    # inter-storey drifts: d_0 = v_0, d_i = v_i - v_{i-1}; shear force c_i d_i
    drift = np.diff(v, axis=0, prepend=np.zeros_like(v[:1]))
    shear = coeffs * drift
    out = shear.copy()
    out[:-1] -= shear[1:]
    return out


def shear_frame_drift(aug_state: Array, t: float, params: ShearFrameParams) -> Array:
    """Drift of the augmented state [X, Xdot, K, C] (parameters are constant)."""
    n = params.n_floors
    x = np.asarray(aug_state, dtype=float)
    disp, vel, k, c = x[:n], x[n : 2 * n], x[2 * n : 3 * n], x[3 * n : 4 * n]
    acc = params.forcing(t) - shear_apply(c, vel) - shear_apply(k, disp)
    return np.concatenate([vel, acc, np.zeros_like(k), np.zeros_like(c)])


def shear_frame_process_model(
    params: ShearFrameParams, horizon: float, walk_start: float = 0.5, walk_end: float = 0.05
) -> ProcessModel:
    """Augmented state/parameter SDE.

    Velocities carry the structural noise ``sigma_diag``. Parameters get an
    artificial random walk whose intensity decays linearly from
    ``walk_start`` to ``walk_end`` over ``horizon``.
    """
    n = params.n_floors

    def diffusion(t, x):
        frac = min(max(t / horizon, 0.0), 1.0)
        walk = walk_start + (walk_end - walk_start) * frac
        d = np.zeros(4 * n)
        d[n : 2 * n] = params.sigma_diag
        d[2 * n :] = walk
        return np.diag(d)

    return ProcessModel(4 * n, 4 * n, lambda t, x: shear_frame_drift(x, t, params), diffusion)


def shear_frame_truth(params: ShearFrameParams, dt: float, n_steps: int, noise: Array | None = None) -> Array:
    """Euler-Maruyama truth for [X, Xdot] starting at rest.

    ``noise`` holds standard normal draws of shape ``(n_floors, n_steps)``;
    ``None`` gives the deterministic response.
    """
    n = params.n_floors
    aug = np.concatenate([np.zeros(2 * n), params.k_true, params.c_true])
    out = np.empty((2 * n, n_steps + 1))
    out[:, 0] = 0.0
    for i in range(n_steps):
        t = i * dt
        aug = aug + shear_frame_drift(aug, t, params) * dt
        if noise is not None:
            aug[n : 2 * n] += params.sigma_diag * np.sqrt(dt) * noise[:, i]
        out[:, i + 1] = aug[: 2 * n]
    return out


def displacement_intensity(n_floors: int, alpha: Array) -> IntensityModel:
    """Rates ``alpha_i * |X^i|`` on the floor displacements."""
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n_floors,)).copy()

    def rate(t, x):
        disp = np.abs(np.asarray(x)[:n_floors])
        return alpha.reshape((-1,) + (1,) * (disp.ndim - 1)) * disp

    return IntensityModel(n_floors, rate)


# --- Duffing control -------------------------------------------------------


@dataclass(frozen=True)
class DuffingControlProblem:
    c: float = 5.0
    k: float = 100.0
    d: float = 0.0
    f0: float = 20.0
    omega: float = 5.0
    sigma: float = 0.01
    xg0: float = 0.05
    omega_g: float = 4.0
    weight_R: Array = field(default_factory=lambda: 0.1 * np.eye(2))
    weight_S: float = 0.0
    control_walk_sigma: float = 50.0
    inner_iterations: int = 5
    alpha_control: float = 1e4
    x0: Array = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        r = np.asarray(self.weight_R, dtype=float)
        if r.shape != (2, 2) or not np.allclose(r, r.T):
            raise ValueError("weight_R must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(r).min() < -1e-12:
            raise ValueError("weight_R must be positive semi-definite")
        if self.weight_S < 0:
            raise ValueError("weight_S must be non-negative")
        if self.inner_iterations < 1:
            raise ValueError("inner_iterations must be >= 1")
        object.__setattr__(self, "weight_R", r)

    def forcing(self, t: float) -> float:
        return self.f0 * np.cos(self.omega * t)

    def base_acceleration(self, t: float) -> float:
        # second derivative of xg0 * sin(omega_g t)
        return -self.xg0 * self.omega_g**2 * np.sin(self.omega_g * t)


def duffing_drift(state: Array, u, t: float, problem: DuffingControlProblem) -> Array:
    x, v = np.asarray(state, dtype=float)[0], np.asarray(state, dtype=float)[1]
    acc = (
        problem.forcing(t)
        - problem.c * v
        - problem.k * x
        - problem.d * x**3
        - problem.base_acceleration(t)
        + np.asarray(u, dtype=float)
    )
    return np.stack(np.broadcast_arrays(v, acc))


def performance_index(state2: Array, u, R: Array, S: float) -> Array:
    """x^T R x + S u^2, evaluated column-wise for ``(2, n)`` states."""
    x = np.asarray(state2, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.einsum("i...,ij,j...->...", x, np.asarray(R, dtype=float), x) + S * u**2
