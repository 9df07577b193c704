"""Plot emission for trial records, filter traces, learning curves, controls.

All figures are written as SVG alongside the CSVs that back them, so a
record can be regenerated/checked without matplotlib. Uses the Agg backend.
"""

from __future__ import annotations

import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .control import step_response
from .mission import LOG_COLUMNS, TrialRecord

PLOT_MANIFEST = (
    "trajectory.svg", "trajectory.csv",
    "filter_traces.svg", "filter_traces.csv",
    "control_step.svg", "control_step.csv",
)
LEARNING_FILES = ("learning_curve.svg",)


def _col(rows, name):
    idx = LOG_COLUMNS.index(name)
    return [row[idx] for row in rows]


def emit_plots(records: list[TrialRecord], out_dir, learning_csv=None) -> list[str]:
    """Write the documented plot/CSV set for the given records.

    Returns the list of created file names. Raises ValueError on an empty
    record list and OSError if the directory cannot be written.
    """
    if not records:
        raise ValueError("no records to plot")
    os.makedirs(out_dir, exist_ok=True)
    created = []

    # trajectory overlay
    fig, ax = plt.subplots(figsize=(8, 4))
    for rec in records:
        xs = [float(v) for v in _col(rec.rows, "x")]
        ys = [float(v) for v in _col(rec.rows, "y")]
        ax.plot(xs, ys, lw=0.8, label=f"seed {rec.seed} ({rec.outcome})")
    sx, sy = records[0].source_xy
    ax.plot([sx], [sy], "r*", ms=12, label="source")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title("flight paths")
    ax.legend(fontsize=6, loc="upper right")
    fig.savefig(os.path.join(out_dir, "trajectory.svg"))
    plt.close(fig)
    created.append("trajectory.svg")
    with open(os.path.join(out_dir, "trajectory.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "tick", "x", "y"])
        for rec in records:
            for row in rec.rows:
                w.writerow([rec.seed, row[0], row[LOG_COLUMNS.index("x")],
                            row[LOG_COLUMNS.index("y")]])
    created.append("trajectory.csv")

    # divergence / signal traces for the first record
    rec = records[0]
    ticks = [int(v) for v in _col(rec.rows, "tick")]
    d_line = [float(v) for v in _col(rec.rows, "d_line")]
    s_line = [float(v) for v in _col(rec.rows, "s_line")]
    sensed = [float(v) for v in _col(rec.rows, "left_sensed")]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.plot(ticks, sensed, lw=0.8)
    ax1.set_ylabel("sensed left (a.u.)")
    ax2.plot(ticks, d_line, label="D")
    ax2.plot(ticks, s_line, label="S")
    ax2.set_ylabel("divergence / signal")
    ax2.set_xlabel("tick")
    ax2.legend()
    fig.savefig(os.path.join(out_dir, "filter_traces.svg"))
    plt.close(fig)
    created.append("filter_traces.svg")
    with open(os.path.join(out_dir, "filter_traces.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tick", "left_sensed", "d_line", "s_line"])
        for t, c, d, s in zip(ticks, sensed, d_line, s_line):
            w.writerow([t, repr(c), repr(d), repr(s)])
    created.append("filter_traces.csv")

    # controller step responses (altitude + pitch), command = 1 unit
    fig, ax = plt.subplots(figsize=(8, 3))
    rows = []
    for axis in ("altitude", "pitch"):
        times, ys = step_response(axis, 1.0, 30.0)
        ax.plot(times, ys, label=axis)
        rows.append((axis, times, ys))
    ax.axhline(1.0, color="k", lw=0.5, ls="--")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("response")
    ax.legend()
    fig.savefig(os.path.join(out_dir, "control_step.svg"))
    plt.close(fig)
    created.append("control_step.svg")
    with open(os.path.join(out_dir, "control_step.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis", "t", "y"])
        for axis, times, ys in rows:
            for t, y in zip(times, ys):
                w.writerow([axis, repr(t), repr(y)])
    created.append("control_step.csv")

    if learning_csv is not None:
        eps, rets = [], []
        with open(learning_csv) as f:
            reader = csv.DictReader(f)
            for row in reader:
                eps.append(int(row["episode"]))
                rets.append(float(row["return"]))
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(eps, rets, lw=0.5, alpha=0.5)
        if len(rets) > 20:
            kernel = np.ones(20) / 20.0
            ax.plot(eps[19:], np.convolve(rets, kernel, mode="valid"),
                    lw=1.5, label="20-episode mean")
            ax.legend()
        ax.set_xlabel("episode")
        ax.set_ylabel("return")
        fig.savefig(os.path.join(out_dir, "learning_curve.svg"))
        plt.close(fig)
        created.append("learning_curve.svg")

    return created
