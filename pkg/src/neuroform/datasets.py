"""Training-set assembly for the per-agent controllers.

The network input of agent i is the stacked follower state rearranged
into per-agent blocks [position_j, velocity_j] in ascending agent order,
with the blocks of agents outside N_i ∪ {i} zeroed, followed by N
follower-presence bits and one leader-access bit. A zeroed block always
travels with a cleared bit, so downstream layers can tell "absent" from
"measured zero".
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, DimensionError, WeightFormatError
from .topology import Topology

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrajectoryData:
    """One recorded system run used as training material.

    states are stacked [positions; velocities] rows, controls are stacked
    per-agent rows, both on the same time grid.
    """

    times: np.ndarray       # (S,)
    states: np.ndarray      # (S, 2*N*n)
    controls: np.ndarray    # (S, N*n)
    topology: Topology

    def __post_init__(self):
        s = len(self.times)
        nn = self.topology.n_agents * self.topology.state_dim
        if self.states.shape != (s, 2 * nn):
            raise DimensionError(f"states must have shape ({s}, {2 * nn})")
        if self.controls.shape != (s, nn):
            raise DimensionError(f"controls must have shape ({s}, {nn})")


@dataclass(frozen=True)
class TrainingSample:
    """A single (masked input, control target) pair."""

    input: np.ndarray
    target: np.ndarray


def input_width(n_agents: int, state_dim: int) -> int:
    return 2 * n_agents * state_dim + n_agents + 1


def nn_input_layout(topo: Topology, i: int) -> tuple[np.ndarray, np.ndarray]:
    """(block mask over the 2Nn state slots, N+1 presence bits) for agent i.

    Block j is present iff j is agent i itself or one of its neighbors;
    the final bit is the leader-access flag b_i.
    """
    n, N = topo.state_dim, topo.n_agents
    present = np.zeros(N, dtype=bool)
    present[i - 1] = True
    for j in topo.neighbors(i):
        present[j - 1] = True
    mask = np.repeat(present, 2 * n).astype(float)
    bits = np.concatenate([present.astype(float), [float(topo.leader_flag(i))]])
    return mask, bits


def state_to_blocks(x: np.ndarray, n_agents: int, state_dim: int) -> np.ndarray:
    """Reorder a stacked [positions; velocities] state into per-agent blocks."""
    nn = n_agents * state_dim
    if x.shape[-1] != 2 * nn:
        raise DimensionError(f"state rows must have width {2 * nn}")
    pos = x[..., :nn].reshape(*x.shape[:-1], n_agents, state_dim)
    vel = x[..., nn:].reshape(*x.shape[:-1], n_agents, state_dim)
    return np.concatenate([pos, vel], axis=-1).reshape(*x.shape[:-1], 2 * nn)


def make_nn_input(
    x: np.ndarray, topo: Topology, i: int, mask: np.ndarray = None, bits: np.ndarray = None
) -> np.ndarray:
    """Masked network input of agent i for one stacked state (or rows of them)."""
    if mask is None or bits is None:
        mask, bits = nn_input_layout(topo, i)
    blocks = state_to_blocks(x, topo.n_agents, topo.state_dim) * mask
    if blocks.ndim == 1:
        return np.concatenate([blocks, bits])
    return np.hstack([blocks, np.broadcast_to(bits, (blocks.shape[0], len(bits)))])


@dataclass
class AgentDataset:
    """All training rows of one agent, as dense arrays."""

    agent: int
    inputs: np.ndarray   # (M, input_width)
    targets: np.ndarray  # (M, n)
    n_agents: int
    state_dim: int

    def __len__(self) -> int:
        return len(self.inputs)

    def sample(self, k: int) -> TrainingSample:
        return TrainingSample(self.inputs[k], self.targets[k])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()


def sample_indices(length: int, count: int) -> np.ndarray:
    """Uniform-in-time sample of `count` indices from a grid of `length`."""
    if length < 2:
        raise DataError(f"trajectory has only {length} samples; need at least 2")
    return np.floor(np.linspace(0, length - 1, count)).astype(int)


def build_agent_dataset(
    agent: int,
    trajectories: list[TrajectoryData],
    sample_count: int,
) -> AgentDataset:
    """Sample every trajectory uniformly in time and assemble agent rows.

    Each trajectory carries its own topology, so the neighbor masks may
    differ between trajectories of the same agent.
    """
    if not trajectories:
        raise DataError("no trajectories given")
    n = trajectories[0].topology.state_dim
    n_agents = trajectories[0].topology.n_agents
    width = input_width(n_agents, n)
    inputs, targets = [], []
    for traj in trajectories:
        topo = traj.topology
        if topo.n_agents != n_agents or topo.state_dim != n:
            raise DataError("all trajectories must share the agent count and state size")
        idx = sample_indices(len(traj.times), sample_count)
        mask, bits = nn_input_layout(topo, agent)
        rows = make_nn_input(traj.states[idx], topo, agent, mask, bits)
        sl = slice((agent - 1) * n, agent * n)
        tgt = traj.controls[idx, sl]
        if not np.all(np.isfinite(tgt)):
            raise DataError(f"trajectory has non-finite controls for agent {agent}")
        inputs.append(rows)
        targets.append(tgt)
    return AgentDataset(
        agent=agent,
        inputs=np.vstack(inputs),
        targets=np.vstack(targets),
        n_agents=n_agents,
        state_dim=n,
    )


def masked_blocks_are_zero(ds: AgentDataset) -> bool:
    """Audit: every cleared presence bit has an exactly zero state block."""
    n, N = ds.state_dim, ds.n_agents
    blocks = ds.inputs[:, : 2 * N * n].reshape(len(ds.inputs), N, 2 * n)
    bits = ds.inputs[:, 2 * N * n : 2 * N * n + N]
    absent = bits == 0.0
    return bool(np.all(blocks[absent] == 0.0))


def save_dataset(ds: AgentDataset, path) -> None:
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "agent": ds.agent,
        "n_agents": ds.n_agents,
        "state_dim": ds.state_dim,
        "rows": len(ds),
        "columns": _column_names(ds.n_agents, ds.state_dim),
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            inputs=ds.inputs,
            targets=ds.targets,
        )


def load_dataset(path) -> AgentDataset:
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except Exception as exc:
        raise WeightFormatError(f"cannot read dataset file {path}: {exc}") from exc
    try:
        meta = json.loads(bytes(data["meta"]).decode())
    except KeyError as k:
        raise WeightFormatError(f"{path} has no meta header") from k
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise WeightFormatError(
            f"unsupported dataset format version {meta.get('format_version')!r}"
        )
    ds = AgentDataset(
        agent=meta["agent"],
        inputs=data["inputs"],
        targets=data["targets"],
        n_agents=meta["n_agents"],
        state_dim=meta["state_dim"],
    )
    if ds.inputs.shape[1] != input_width(ds.n_agents, ds.state_dim):
        raise WeightFormatError(f"{path}: input width does not match the header")
    if len(ds.inputs) != meta.get("rows"):
        raise WeightFormatError(f"{path}: row count does not match the header")
    return ds


def _column_names(n_agents: int, state_dim: int) -> list[str]:
    axes = "xyz"[:state_dim] if state_dim <= 3 else [f"c{k}" for k in range(state_dim)]
    cols = []
    for j in range(1, n_agents + 1):
        cols += [f"pos_a{j}_{a}" for a in axes]
        cols += [f"vel_a{j}_{a}" for a in axes]
    cols += [f"present_a{j}" for j in range(1, n_agents + 1)]
    cols.append("leader_access")
    return cols
