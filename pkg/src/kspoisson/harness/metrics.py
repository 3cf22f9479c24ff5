"""Monte Carlo error summaries."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np


def rmse_over_runs(estimates: Sequence[np.ndarray], truth: np.ndarray, components=None) -> np.ndarray:
    """Root mean square error per time step, pooled over runs and components.

    Parameters
    ----------
    estimates : sequence of (n_x, n_t) arrays, one per run
    truth : (n_x, n_t) array
    components : indices to pool; all rows when ``None``

    Returns
    -------
    (n_t,) array
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if len(estimates) == 0:
        raise ValueError("need at least one run")
    runs = [np.atleast_2d(np.asarray(e, dtype=float)) for e in estimates]
    if any(r.shape != truth.shape for r in runs):
        raise ValueError(f"every estimate must have the truth's shape {truth.shape}")
    stack = np.stack(runs)
    idx = np.arange(truth.shape[0]) if components is None else np.asarray(list(components), dtype=int)
    if idx.size == 0:
        raise ValueError("components must not be empty")
    if idx.min() < 0 or idx.max() >= truth.shape[0]:
        raise ValueError(f"component index out of range for {truth.shape[0]} rows")
    err = stack[:, idx, :] - truth[idx][None]
    return np.sqrt(np.mean(err**2, axis=(0, 1)))


def convergence_time(times: np.ndarray, error: np.ndarray, threshold: float) -> float | None:
    """First grid time after which ``error`` stays below ``threshold``; ``None`` if it never settles."""
    error = np.asarray(error, dtype=float)
    above = ~(error < threshold)  # NaN counts as not converged
    if not above.any():
        return float(times[0])
    last = int(np.flatnonzero(above)[-1])
    if last == len(error) - 1:
        return None
    return float(times[last + 1])
