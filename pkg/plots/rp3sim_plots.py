"""Figure generation from simulator CSV outputs.

Read-only consumers of the harness files: aggregate/bounds CSVs drive the
semilog convergence figure, trajectory CSVs drive the 2-D path comparison.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class PlotInputError(Exception):
    pass


def read_columns(path: str | Path, required: list[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise PlotInputError(f"input CSV not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotInputError(f"{path}: empty CSV")
        for col in required:
            if col not in reader.fieldnames:
                raise PlotInputError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise PlotInputError(f"{path}: no data rows")
    out = {}
    for col in required:
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def plot_convergence(
    aggregate_paths: list[str],
    bounds_path: str | None,
    out_path: str,
    labels: list[str] | None = None,
    column: str = "opt_mean",
    logy: bool = True,
) -> str:
    """Semilog mean-error curves per series with an optional bound overlay."""
    if labels is None:
        labels = [Path(p).stem for p in aggregate_paths]
    if len(labels) != len(aggregate_paths):
        raise PlotInputError("need one label per aggregate CSV")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    floor = 1e-300
    for path, label in zip(aggregate_paths, labels):
        data = read_columns(path, ["k", column])
        ys = np.maximum(data[column], floor) if logy else data[column]
        ax.plot(data["k"], ys, label=label, linewidth=1.4)
    if bounds_path:
        bdata = read_columns(bounds_path, ["k", "opt_bound"])
        ys = np.maximum(bdata["opt_bound"], floor) if logy else bdata["opt_bound"]
        ax.plot(bdata["k"], ys, "k--", label="expected-rate bound", linewidth=1.1)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("optimality error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_trajectory(trajectory_paths: list[str], out_path: str,
                    labels: list[str] | None = None) -> str:
    """2-D position-plane comparison of trajectories, one marker per series."""
    if not trajectory_paths:
        raise PlotInputError("need at least one trajectory CSV")
    if labels is None:
        labels = [Path(p).stem.replace("trajectory_", "") for p in trajectory_paths]
    if len(labels) != len(trajectory_paths):
        raise PlotInputError("need one label per trajectory CSV")
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    markers = ["o", "s", "^", "d", "v", "*"]
    length = None
    for idx, (path, label) in enumerate(zip(trajectory_paths, labels)):
        data = read_columns(path, ["t", "px", "py"])
        if length is None:
            length = len(data["t"])
        elif len(data["t"]) != length:
            raise PlotInputError(
                f"{path}: trajectory length {len(data['t'])} does not match {length}"
            )
        ax.plot(data["px"], data["py"], marker=markers[idx % len(markers)],
                markersize=4, linewidth=1.2, label=label)
    ax.set_xlabel("x position")
    ax.set_ylabel("y position")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
