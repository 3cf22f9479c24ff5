"""Monte Carlo campaign driver and artifact persistence."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import FilterDegeneracyError
from .config import ExperimentConfig
from .experiments import EXPERIMENTS, FilterOutput, Truth

log = logging.getLogger(__name__)

# errors a single filter run may legitimately hit; anything else is a bug and propagates
RUN_ERRORS = (ArithmeticError, FilterDegeneracyError, np.linalg.LinAlgError, ValueError)

FILTER_KEYS = {"ekspf": 1, "sir": 2, "ensrf": 3}


@dataclass
class RunArtifact:
    directory: Path
    config: ExperimentConfig
    summary: dict
    files: list[Path] = field(default_factory=list)

    @property
    def failures(self) -> list[dict]:
        return [f for entry in self.summary["filters"].values() for f in entry["failures"]]


def derive_seed(*keys: int) -> int:
    """64-bit seed from a key tuple; distinct tuples give independent streams."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, dtype=np.uint64)[0])


def filter_labels(config: ExperimentConfig) -> list[tuple[str, str, int]]:
    """``(label, filter, n_e)`` for every filter/ensemble-size combination."""
    out = []
    multi = len(config.ensemble_sizes) > 1
    for name in config.filters:
        for n_e in config.ensemble_sizes:
            out.append((f"{name}_n{n_e}" if multi else name, name, n_e))
    return out


def format_table(times: np.ndarray, rows: np.ndarray, labels: list[str]) -> str:
    rows = np.atleast_2d(rows)
    lines = [",".join(["t", *labels])]
    for i, t in enumerate(times):
        lines.append(",".join(f"{v:.17g}" for v in (t, *rows[:, i])))
    return "\n".join(lines) + "\n"


def write_table(path: Path, times, rows, labels) -> Path:
    path.write_text(format_table(np.asarray(times), np.asarray(rows, dtype=float), labels))
    return path


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_json_ready(data), indent=2, sort_keys=True) + "\n")
    return path


def _write_truth(directory: Path, truth: Truth) -> list[Path]:
    files = [write_table(directory / "truth.csv", truth.times, truth.states, truth.labels)]
    return files


def _write_measurements(directory: Path, truth: Truth) -> list[Path]:
    files = []
    if truth.records is not None:
        files.append(write_table(directory / "measurements.csv", truth.times[1:], truth.records, truth.record_labels))
    if truth.counts is not None:
        path = directory / "counts.csv"
        truth.counts.to_csv(path)
        files.append(path)
    return files


def run_experiment(config: ExperimentConfig) -> RunArtifact:
    """Run every Monte Carlo repetition, persist artifacts and aggregate.

    A filter that fails in one run is logged and listed in the summary; the
    remaining runs and filters still execute.
    """
    exp = EXPERIMENTS[config.experiment]
    params = config.params()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    config.save(out / "config.json")
    files.append(out / "config.json")

    labels = filter_labels(config)
    truths: list[Truth] = []
    results: dict[str, list[tuple[int, FilterOutput]]] = {lab: [] for lab, _, _ in labels}
    failures: dict[str, list[dict]] = {lab: [] for lab, _, _ in labels}
    for run in range(config.n_runs):
        run_dir = out / f"run_{run:03d}"
        run_dir.mkdir(exist_ok=True)
        truth = exp.truth(params, derive_seed(config.seed, run))
        truths.append(truth)
        if run == 0:
            files += _write_truth(out, truth)
        if not exp.shared_truth:
            files += _write_truth(run_dir, truth)
        files += _write_measurements(run_dir, truth)
        for label, name, n_e in labels:
            seed = derive_seed(config.seed, run, FILTER_KEYS[name])
            try:
                res = exp.run_filter(name, params, truth, n_e, seed)
            except RUN_ERRORS as exc:
                log.warning("run %d, filter %s failed: %s", run, label, exc)
                failures[label].append({"run": run, "filter": label, "error": f"{type(exc).__name__}: {exc}"})
                continue
            files.append(write_table(run_dir / f"{label}.csv", res.times, res.table, res.labels))
            results[label].append((run, res))

    summary = {
        "experiment": config.experiment,
        "seed": config.seed,
        "n_runs": config.n_runs,
        "params": params,
        "filters": {},
    }
    for label, _, n_e in labels:
        done = results[label]
        entry = {"ensemble_size": n_e, "n_ok": len(done), "failures": failures[label]}
        if done:
            runs = [r for r, _ in done]
            outs = [o for _, o in done]
            run_truths = [truths[r] for r in runs]
            rmse = exp.rmse(params, run_truths, outs)
            names = sorted(rmse)
            rmse_path = write_table(out / f"rmse_{label}.csv", outs[0].times, np.vstack([rmse[k] for k in names]), names)
            files.append(rmse_path)
            entry["rmse_file"] = rmse_path.name
            entry["final_rmse"] = {k: float(rmse[k][-1]) for k in names}
            entry.update(exp.summarize(params, run_truths, outs))
        summary["filters"][label] = entry
    if exp.compare is not None:
        summary["comparison"] = exp.compare(params, {lab: dict(results[lab]) for lab in results})
    files.append(dump_json(out / "summary.json", summary))
    n_failed = sum(len(v) for v in failures.values())
    if n_failed:
        log.warning("%d filter run(s) failed; see summary.json", n_failed)
    return RunArtifact(out, config, json.loads((out / "summary.json").read_text()), files)
