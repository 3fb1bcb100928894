"""Figure rendering for completed run directories (downstream of the CSV contract).

Reads the delimited series and field files a run produced and writes PNG figures
next to them. Purely a consumer: nothing here feeds back into the numerics, and
the run artifacts remain byte-deterministic whether or not figures are rendered.
"""

from __future__ import annotations

import json
import os

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

DPI = 150


def _load_series(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data


def _fig_series(series, verdict_kind: str, out_path: str) -> None:
    t = series["t"]
    fig, axes = plt.subplots(2, 2, figsize=(9.6, 7.2), sharex=True)
    ax = axes[0, 0]
    m0 = series["mass"][0]
    scale = max(abs(series["energy"][0]), series["kinetic"][0])
    ax.plot(t, (series["mass"] - m0) / m0, label="mass drift")
    ax.plot(t, (series["energy"] - series["energy"][0]) / scale,
            label="energy drift")
    ax.set_ylabel("relative drift")
    ax.legend(fontsize=8)
    ax.set_title("conservation")

    ax = axes[0, 1]
    ax.plot(t, series["kinetic"], color="tab:red")
    if series["kinetic"].max() > 50 * series["kinetic"][0]:
        ax.set_yscale("log")
    ax.set_ylabel("kinetic")
    ax.set_title(f"kinetic norm ({verdict_kind})")

    ax = axes[1, 0]
    ax.plot(t, series["virial"], color="tab:purple")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_ylabel("virial")
    ax.set_xlabel("t")

    ax = axes[1, 1]
    ax.plot(t, series["morawetz"], color="tab:green")
    ax.set_ylabel("localized virial monitor")
    ax.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)


def _fig_profile(field_path: str, out_path: str, title: str) -> None:
    data = np.loadtxt(field_path, delimiter=",", skiprows=1)
    r = data[:, 0]
    amp = np.hypot(data[:, 1], data[:, 2])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    ax1.plot(r, amp)
    ax1.set_xlabel("r")
    ax1.set_ylabel("|u|")
    ax1.set_title(title)
    pos = amp > 0
    ax2.semilogy(r[pos], amp[pos])
    ax2.set_xlabel("r")
    ax2.set_ylabel("|u| (log)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)


def _snapshot_to_csv_arrays(path):
    from .grid import load_snapshot, make_grid
    M, r_max, N, values = load_snapshot(path)
    g = make_grid(M, r_max, N)
    return g.r, values


def render_run(run_dir: str, out_dir=None) -> list:
    """Renders figures for one run directory; returns the written file paths."""
    if not os.path.isdir(run_dir):
        raise FileNotFoundError(f"no such run directory: {run_dir}")
    man_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(man_path):
        raise FileNotFoundError(f"run has no manifest.json: {run_dir}")
    with open(man_path) as fh:
        manifest = json.load(fh)
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []

    series_path = os.path.join(run_dir, "series.csv")
    if os.path.exists(series_path):
        series = _load_series(series_path)
        verdict_kind = manifest.get("verdict", {}).get("kind", "run")
        out = os.path.join(out_dir, "series.png")
        _fig_series(series, verdict_kind, out)
        written.append(out)

    field_path = os.path.join(run_dir, "field.csv")
    if os.path.exists(field_path):
        out = os.path.join(out_dir, "profile.png")
        _fig_profile(field_path, out, "ground-state profile")
        written.append(out)

    snaps = manifest.get("snapshots", [])
    if snaps:
        last = snaps[-1]
        snap_path = os.path.join(run_dir, last["file"])
        if os.path.exists(snap_path):
            r, values = _snapshot_to_csv_arrays(snap_path)
            fig, ax = plt.subplots(figsize=(6.4, 4.0))
            ax.plot(r, np.abs(values))
            ax.set_xlabel("r")
            ax.set_ylabel("|u|")
            ax.set_title(f"final state, t = {last['t']:.6g}")
            fig.tight_layout()
            out = os.path.join(out_dir, "final_state.png")
            fig.savefig(out, dpi=DPI)
            plt.close(fig)
            written.append(out)
    return written
