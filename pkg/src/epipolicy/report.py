"""CSV tables and SVG figures for optimizer runs and sweeps.

Figures are drawn from the CSV files only, so a figure can always be
regenerated from the tables next to it.
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .epicast import EpicastState
from .npi import NpiMenu
from .optimizer import OptimizationResult
from .seir import EpidemicState

POLICY_COLUMNS = ("day", "npi_label", "reward", "new_cases")
SUMMARY_COLUMNS = ("value", "total_reward", "cumulative_infections", "max_new_cases", "feasible")


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write atomically (temp file + rename) with a fixed float format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def policy_rows(result: OptimizationResult, menu: NpiMenu):
    for t, (i, nc) in enumerate(zip(result.policy.assignments, result.trajectory.new_cases)):
        yield (t + 1, menu[i].label, menu.rewards[i], float(nc))


def trajectory_table(result: OptimizationResult):
    """(header, rows) for the realized states, day 0 included."""
    states = result.trajectory.states
    if isinstance(states[0], EpidemicState):
        header = ("day", "S", "E", "I", "R")
        rows = [(t, *map(float, x.counts())) for t, x in enumerate(states)]
    elif isinstance(states[0], EpicastState):
        header = ("day", "infected", "recovered")
        rows = [(t, float(x.infected), float(x.recovered)) for t, x in enumerate(states)]
    else:
        raise TypeError(f"no table layout for {type(states[0]).__name__}")
    return header, rows


def net_score_table(result: OptimizationResult, menu: NpiMenu):
    header = ("day", "chosen", "fallback") + tuple(f"net_{lab}" for lab in menu.labels)
    rows = [(d.day + 1, menu[d.chosen].label, int(d.fallback), *map(float, d.net)) for d in result.decisions]
    return header, rows


def write_run_tables(result: OptimizationResult, menu: NpiMenu, out_dir) -> dict:
    out_dir = Path(out_dir)
    files = {"policy": write_csv(out_dir / "policy.csv", POLICY_COLUMNS, policy_rows(result, menu))}
    files["trajectory"] = write_csv(out_dir / "trajectory.csv", *trajectory_table(result))
    files["net_scores"] = write_csv(out_dir / "net_scores.csv", *net_score_table(result, menu))
    return files


# -- figures --------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids and no date stamp -> byte-stable SVG
    matplotlib.rcParams["svg.hashsalt"] = "epipolicy"
    return plt


def _save_svg(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.svg")
    fig.savefig(tmp, format="svg", metadata={"Date": None, "Creator": None})
    os.replace(tmp, path)
    return path


def plot_run(policy_csv, svg_path, tau: float, labels: Sequence[str], title: str = "") -> Path:
    """Daily new cases with the threshold line and one colored band per NPI block."""
    plt = _pyplot()
    rows = read_csv(policy_csv)
    day = np.array([int(r["day"]) for r in rows])
    cases = np.array([float(r["new_cases"]) for r in rows])
    npi = [r["npi_label"] for r in rows]
    cmap = plt.get_cmap("RdYlGn", max(len(labels), 2))
    color = {lab: cmap(n) for n, lab in enumerate(labels)}

    fig, ax = plt.subplots(figsize=(9, 4))
    start = 0
    for t in range(1, len(npi) + 1):
        if t == len(npi) or npi[t] != npi[start]:
            ax.axvspan(day[start] - 0.5, day[t - 1] + 0.5, color=color[npi[start]], alpha=0.25, lw=0)
            start = t
    ax.plot(day, cases, color="k", lw=1.2, label="new cases")
    if math.isfinite(tau):
        ax.axhline(tau, color="tab:red", ls="--", lw=1, label=f"tau = {tau:g}")
    handles = [plt.Rectangle((0, 0), 1, 1, color=color[lab], alpha=0.4) for lab in labels]
    leg = ax.legend(handles, labels, title="NPI", loc="upper right", fontsize=7, ncol=2)
    ax.add_artist(leg)
    ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel("day")
    ax.set_ylabel("daily new cases")
    ax.set_xlim(day[0] - 0.5, day[-1] + 0.5)
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    try:
        return _save_svg(fig, svg_path)
    finally:
        plt.close(fig)


def plot_sweep(summary_csv, svg_path, parameter: str) -> Path:
    """Total reward against cumulative infections, one labeled point per run."""
    plt = _pyplot()
    rows = read_csv(summary_csv)
    x = np.array([float(r["cumulative_infections"]) for r in rows])
    y = np.array([float(r["total_reward"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(x, y, color="tab:blue", zorder=3)
    for xi, yi, r in zip(x, y, rows):
        mark = "" if r["feasible"] == "1" else " (infeasible)"
        ax.annotate(f"{parameter}={r['value']}{mark}", (xi, yi), textcoords="offset points",
                    xytext=(4, 4), fontsize=7)
    ax.set_xlabel("cumulative infections")
    ax.set_ylabel("total reward")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    try:
        return _save_svg(fig, svg_path)
    finally:
        plt.close(fig)
