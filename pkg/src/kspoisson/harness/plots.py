"""Write matplotlib scripts that render an artifact directory's CSVs.

Scripts are self-contained and read only files inside the artifact; they are
written, never executed here.
"""

from __future__ import annotations

from pathlib import Path

from .config import ExperimentConfig
from .runner import filter_labels

_HEADER = '''"""Generated plot script; run with python from anywhere."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

ROOT = Path(__file__).resolve().parent.parent


def load(name):
    with open(ROOT / name) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(ROOT / name, delimiter=",", skiprows=1, ndmin=2)
    return {h: data[:, i] for i, h in enumerate(header)}

'''

_TRAJECTORY = '''
truth = load("truth.csv")
plt.figure(figsize=(6, 5))
plt.plot(truth["x"], truth["y"], "k-", lw=2, label="reference")
for label in LABELS:
    est = load(f"run_000/{label}.csv")
    plt.plot(est["x"], est["y"], "--", label=label)
plt.xlabel("x (m)")
plt.ylabel("y (m)")
plt.legend()
plt.tight_layout()
plt.savefig(Path(__file__).with_suffix(".png"), dpi=150)
'''

_RMSE = '''
tables = {label: load(f"rmse_{label}.csv") for label in LABELS}
columns = [c for c in next(iter(tables.values())) if c != "t"]
fig, axes = plt.subplots(len(columns), 1, figsize=(7, 2.6 * len(columns)), sharex=True, squeeze=False)
for ax, col in zip(axes[:, 0], columns):
    for label, tab in tables.items():
        ax.plot(tab["t"], tab[col], label=label)
    ax.set_ylabel(f"RMSE {col}")
    ax.legend()
axes[-1, 0].set_xlabel("t (s)")
fig.tight_layout()
fig.savefig(Path(__file__).with_suffix(".png"), dpi=150)
'''

_PARAMETERS = '''
truth = load("truth.csv")
for prefix, name in (("k", "stiffness"), ("c", "damping")):
    cols = sorted(c for c in truth if c.startswith(prefix) and c[1:].isdigit())
    fig, axes = plt.subplots(1, len(LABELS), figsize=(5 * len(LABELS), 4), squeeze=False)
    for ax, label in zip(axes[0], LABELS):
        est = load(f"run_000/{label}.csv")
        for col in cols:
            ax.plot(est["t"], est[col], label=col)
        ax.axhline(truth[cols[0]][0], color="k", ls=":")
        ax.set_title(f"{label} {name}")
        ax.set_xlabel("t (s)")
        ax.legend()
    fig.tight_layout()
    fig.savefig(Path(__file__).with_name(f"{Path(__file__).stem}_{name}.png"), dpi=150)
'''

_CONTROL = '''
run = load("run_000/ekspf.csv")
fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
axes[0].plot(run["t"], run["x_uncontrolled"], label="uncontrolled")
axes[0].plot(run["t"], run["x"], label="controlled")
axes[0].set_ylabel("displacement (m)")
axes[0].legend()
axes[1].plot(run["t"], run["control"])
axes[1].set_ylabel("control force (N)")
axes[1].set_xlabel("t (s)")
fig.tight_layout()
fig.savefig(Path(__file__).with_suffix(".png"), dpi=150)
'''

_STATE = '''
truth = load("truth.csv")
plt.figure(figsize=(8, 4))
plt.plot(truth["t"], truth["x"], "k-", lw=1.5, label="truth")
for label in LABELS:
    est = load(f"run_000/{label}.csv")
    plt.plot(est["t"], est["x"], label=label)
plt.xlabel("t (s)")
plt.ylabel("state")
plt.legend()
plt.tight_layout()
plt.savefig(Path(__file__).with_suffix(".png"), dpi=150)
'''

_TEMPLATES = {
    "trajectory": _TRAJECTORY,
    "rmse": _RMSE,
    "parameters": _PARAMETERS,
    "control": _CONTROL,
    "state": _STATE,
}

_BY_EXPERIMENT = {
    "tracking": ("trajectory", "rmse"),
    "tracking-faraway": ("trajectory", "rmse"),
    "tracking-circle": ("trajectory", "rmse"),
    "shear-frame": ("parameters", "rmse"),
    "duffing-control": ("control", "rmse"),
    "ou-validation": ("state", "rmse"),
}


def _needed_files(kind: str, labels: list[str]) -> list[str]:
    if kind == "rmse":
        return [f"rmse_{lab}.csv" for lab in labels]
    if kind == "control":
        return ["run_000/ekspf.csv"]
    return ["truth.csv"] + [f"run_000/{lab}.csv" for lab in labels]


def emit_plots(artifact_dir: str | Path, components: list[str] | None = None) -> list[Path]:
    """Write one script per requested plot kind into ``<artifact>/plots``.

    ``components=None`` selects every kind that applies to the experiment.
    Raises ``FileNotFoundError`` naming each CSV a requested script would need
    but the artifact lacks.
    """
    root = Path(artifact_dir)
    if components is not None and len(components) == 0:
        return []
    config = ExperimentConfig.load(root / "config.json")
    available = _BY_EXPERIMENT[config.experiment]
    kinds = list(available) if components is None else list(components)
    bad = [k for k in kinds if k not in available]
    if bad:
        raise ValueError(f"plot kinds {bad} do not apply to {config.experiment}; choose from {list(available)}")
    labels = [lab for lab, _, _ in filter_labels(config)]
    missing = sorted({f for k in kinds for f in _needed_files(k, labels) if not (root / f).is_file()})
    if missing:
        raise FileNotFoundError(f"artifact {root} lacks: {', '.join(missing)}")
    plot_dir = root / "plots"
    plot_dir.mkdir(exist_ok=True)
    written = []
    for kind in kinds:
        path = plot_dir / f"plot_{kind}.py"
        path.write_text(_HEADER + f"LABELS = {labels!r}\n" + _TEMPLATES[kind])
        written.append(path)
    return written
