"""Seeded random streams, Brownian increments and grid-sampled counting paths."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Well-known sub-stream ids. Anything else is fine too, as long as callers
# sharing a seed pick distinct ids.
STREAM_PROCESS = 1
STREAM_MEASUREMENT = 2
STREAM_INITIAL = 3
STREAM_PARTICLES = 4
STREAM_COUNTING = 5


@dataclass(frozen=True)
class RandomSource:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams are derived through :class:`numpy.random.SeedSequence` spawn keys,
    so distinct ids never share generator state.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(p < 0 for p in self.path):
            raise ValueError("seed, stream_id and sub-stream keys must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RandomSource":
        """Sub-stream keyed by ``index``, disjoint from the parent and its siblings."""
        return RandomSource(self.seed, self.stream_id, (*self.path, index))


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def times(self) -> np.ndarray:
        """All ``n_steps + 1`` grid points, ``t0`` included."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.t0 + self.dt * self.n_steps


@dataclass(frozen=True)
class CountingPath:
    """Cumulative event counts per channel, sampled on ``grid``.

    ``counts`` has shape ``(n_y, n_steps + 1)`` and column 0 is zero.
    """

    grid: TimeGrid
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[1] != self.grid.n_steps + 1:
            raise ValueError(
                f"counts must have shape (n_y, {self.grid.n_steps + 1}), got {counts.shape}"
            )
        if not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be integers")
        if np.any(counts[:, 0] != 0):
            raise ValueError("counts at the first grid point must be zero")
        if np.any(np.diff(counts, axis=1) < 0):
            raise ValueError("counts must be non-decreasing")
        counts = counts.astype(np.int64, copy=True)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_y(self) -> int:
        return self.counts.shape[0]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"ch{l}" for l in range(self.n_y)])
        for i, t in enumerate(self.grid.times):
            writer.writerow([f"{t:.17g}"] + [int(c) for c in self.counts[:, i]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "CountingPath":
        rows = list(csv.reader(Path(path).read_text().splitlines()))
        body = rows[1:]
        times = np.array([float(r[0]) for r in body])
        counts = np.array([[int(c) for c in r[1:]] for r in body], dtype=np.int64).T
        dt = (times[-1] - times[0]) / (len(times) - 1)
        return cls(TimeGrid(times[0], dt, len(times) - 1), counts)


def brownian_increments(source: RandomSource, n: int, dt: float) -> np.ndarray:
    """``n`` independent N(0, dt) draws."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    return np.sqrt(dt) * source.generator().standard_normal(n)


def _open_unit_uniform(rng: np.random.Generator) -> float:
    # Generator.random() is on [0, 1); reject the zero so log stays finite.
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def _simulate_channel(rng: np.random.Generator, rates: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Arrival-time recursion for one channel with piecewise-constant rates.

    ``rates[i - 1]`` is the rate at grid point ``t_i``. The first pending
    arrival uses the rate at ``t_1``. Whenever arrivals are registered at
    ``t_i``, further inter-arrival times are drawn with the rate at ``t_i``.
    The chain of those draws inside ``(arrival, t_i]`` is summed in closed
    form: its length is Poisson and the overshoot past ``t_i`` is again
    exponential. This has the same law as looping the recursion one draw at a
    time, and the cost per step does not depend on the rate. A zero-rate
    step registers nothing and discards the outstanding arrival; a fresh one
    is drawn from the start of the next positive-rate step.
    """
    n = grid.n_steps
    counts = np.zeros(n + 1, dtype=np.int64)
    times = grid.times
    count = 0
    pending = None  # None: no draw outstanding because the rate was zero
    if rates[0] > 0:
        pending = times[0] - np.log(_open_unit_uniform(rng)) / rates[0]
    for i in range(1, n + 1):
        lam = rates[i - 1]
        if lam <= 0:
            # silent step: the outstanding draw is deferred until the rate returns
            pending = None
        else:
            if pending is None:
                pending = times[i - 1] - np.log(_open_unit_uniform(rng)) / lam
            if pending <= times[i]:
                count += 1 + int(rng.poisson(lam * (times[i] - pending)))
                pending = times[i] - np.log(_open_unit_uniform(rng)) / lam
        counts[i] = count
    return counts


def simulate_counting_path(source: RandomSource, intensity_path: np.ndarray, grid: TimeGrid) -> CountingPath:
    """Simulate a doubly stochastic Poisson path from sampled rates.

    Parameters
    ----------
    source : RandomSource
        Channel ``l`` draws from ``source.child(l)``.
    intensity_path : array, shape (n_y, n_steps)
        Rates (events per second); column ``i`` holds the rate at ``t_{i+1}``.
    grid : TimeGrid

    Returns
    -------
    CountingPath
    """
    rates = np.asarray(intensity_path, dtype=float)
    if rates.ndim == 1:
        rates = rates[None, :]
    if rates.shape[1] != grid.n_steps:
        raise ValueError(f"intensity_path must have {grid.n_steps} columns, got {rates.shape[1]}")
    if not np.all(np.isfinite(rates)):
        raise ValueError("intensity_path must be finite")
    if np.any(rates < 0):
        raise ValueError("intensity_path must be non-negative")
    counts = np.vstack(
        [_simulate_channel(source.child(l).generator(), rates[l], grid) for l in range(rates.shape[0])]
    )
    return CountingPath(grid, counts)


def counting_increments(path: CountingPath) -> np.ndarray:
    """Per-step increments, shape ``(n_y, n_steps)``."""
    return np.diff(path.counts, axis=1)
