"""Static figure emission (SVG) for records and comparison reports.

Figures mirror the experiment write-ups: x-y formation snapshots with
communication edges, error and adaptation time series, the growth-
condition monitor, and comparison mean/std curves. Output is
byte-deterministic: SVG ids are salted with a fixed string and the date
metadata is suppressed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import SimRecord
from .topology import Topology

matplotlib.rcParams["svg.hashsalt"] = "neuroform"

AGENT_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def save_figure(fig, path) -> Path:
    path = Path(path).with_suffix(".svg")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _positions_at(rec: SimRecord, idx: int) -> np.ndarray:
    nn = rec.n_agents * rec.state_dim
    return rec.x[idx, :nn].reshape(rec.n_agents, rec.state_dim)


def draw_snapshot(ax, rec: SimRecord, topo: Topology, idx: int) -> int:
    """One x-y formation snapshot with edge overlays; returns edge count."""
    pos = _positions_at(rec, idx)
    leader = rec.x0_pos[idx]
    edges_drawn = 0
    for i, j in sorted(topo.edges):
        ax.plot(
            [pos[i - 1, 0], pos[j - 1, 0]], [pos[i - 1, 1], pos[j - 1, 1]],
            color="black", lw=0.8, zorder=1, gid="comm-edge",
        )
        edges_drawn += 1
    for i in range(1, topo.n_agents + 1):
        if topo.leader_flag(i):
            ax.plot(
                [pos[i - 1, 0], leader[0]], [pos[i - 1, 1], leader[1]],
                color="black", lw=0.8, ls="--", zorder=1, gid="comm-edge",
            )
            edges_drawn += 1
    ax.plot(
        rec.x0_pos[: idx + 1, 0], rec.x0_pos[: idx + 1, 1],
        color="tab:blue", lw=1.2, label="leader path",
    )
    for a in range(topo.n_agents):
        ax.plot(
            pos[a, 0], pos[a, 1], "o",
            color=AGENT_COLORS[a % len(AGENT_COLORS)], ms=6,
        )
        ax.annotate(str(a + 1), (pos[a, 0], pos[a, 1]), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.plot(leader[0], leader[1], "*", color="tab:red", ms=10)
    ax.set_title(f"t = {rec.time[idx]:.1f} s", fontsize=9)
    ax.set_aspect("equal", adjustable="datalim")
    return edges_drawn


def snapshot_figure(rec: SimRecord, topo: Topology, times=None):
    """Grid of formation snapshots in the x-y plane."""
    if times is None:
        times = np.linspace(rec.time[0], rec.time[-1], 6)
    idxs = [int(np.argmin(np.abs(rec.time - t))) for t in times]
    ncol = 3
    nrow = (len(idxs) + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3.5 * nrow))
    for ax, idx in zip(np.atleast_1d(axes).ravel(), idxs):
        draw_snapshot(ax, rec, topo, idx)
    for ax in np.atleast_1d(axes).ravel()[len(idxs):]:
        ax.set_visible(False)
    fig.suptitle("formation snapshots (x-y plane)")
    fig.tight_layout()
    return fig


def error_figure(rec: SimRecord):
    """Per-agent |e_i1| + |e_i1_dot| and |e_i2| time series."""
    n = rec.state_dim
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    for i in range(1, rec.n_agents + 1):
        sl = slice((i - 1) * n, i * n)
        ax1.plot(rec.time, rec.agent_error_metric(i), label=f"agent {i}")
        ax2.plot(rec.time, np.linalg.norm(rec.e2[:, sl], axis=1), label=f"agent {i}")
    ax1.set_xlabel("t [s]"); ax1.set_ylabel(r"$\|e_{i,1}\| + \|\dot e_{i,1}\|$")
    ax2.set_xlabel("t [s]"); ax2.set_ylabel(r"$\|e_{i,2}\|$")
    ax1.legend(fontsize=7); ax2.legend(fontsize=7)
    fig.tight_layout()
    return fig


def adaptation_figure(rec: SimRecord):
    """Adaptation variables (left) and the growth-condition monitor (right)."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    for i in range(rec.n_agents):
        ax1.plot(rec.time, rec.d_hat[:, i], label=f"agent {i + 1}")
    ax1.set_xlabel("t [s]"); ax1.set_ylabel(r"$\hat d_{i,1}$")
    ax1.legend(fontsize=7)
    ax2.plot(rec.time, rec.ch, color="tab:red")
    ax2.axhline(0.0, color="black", lw=0.6)
    ax2.set_xlabel("t [s]"); ax2.set_ylabel("CH(t)")
    fig.tight_layout()
    return fig


def control_figure(rec: SimRecord):
    """Norms of applied controls and of the network outputs per agent."""
    n = rec.state_dim
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    for i in range(1, rec.n_agents + 1):
        sl = slice((i - 1) * n, i * n)
        ax1.plot(rec.time, np.linalg.norm(rec.u[:, sl], axis=1), label=f"agent {i}")
        ax2.plot(rec.time, np.linalg.norm(rec.u_nn[:, sl], axis=1), label=f"agent {i}")
    ax1.set_xlabel("t [s]"); ax1.set_ylabel(r"$\|u_i\|$")
    ax2.set_xlabel("t [s]"); ax2.set_ylabel(r"$\|u_{i,nn}\|$")
    ax1.legend(fontsize=7); ax2.legend(fontsize=7)
    fig.tight_layout()
    return fig


def lyapunov_figure(rec: SimRecord):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(rec.time, rec.v1, label="V1")
    ax.plot(rec.time, rec.v2, label="V2")
    ax.set_xlabel("t [s]"); ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def comparison_figure(report: dict):
    """Mean (left) and standard deviation (right) of the error metric."""
    time = np.asarray(report["time"])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    for kind in sorted(report["policies"]):
        d = report["policies"][kind]
        label = f"{kind} (div {d['divergences']}/{d['runs']})"
        ax1.plot(time, np.asarray(d["mean_series"]), label=label)
        ax2.plot(time, np.asarray(d["std_series"]), label=label)
    for ax, name in ((ax1, "mean"), (ax2, "std")):
        ax.set_xlabel("t [s]")
        ax.set_ylabel(rf"{name} of $\|e_1\| + \|\dot e_1\|$")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig
