"""Communication graph of the follower group and its derived matrices.

Agents are indexed 1..N; index 0 is reserved for the leader. The follower
graph is simple and undirected; leader access is a per-agent 0/1 flag.
All matrices follow the stacked layout in which agent i occupies rows
(i-1)*n .. i*n-1.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AssumptionError, TopologyError


@dataclass(frozen=True)
class Topology:
    """Undirected follower graph plus leader-access flags.

    Attributes:
        n_agents: number of followers N.
        edges: unordered follower pairs, stored as sorted (i, j) with i < j.
        leader_access: length-N tuple of 0/1 flags (b_i).
        state_dim: per-axis dimension n of each agent's position.
    """

    n_agents: int
    edges: frozenset[tuple[int, int]]
    leader_access: tuple[int, ...]
    state_dim: int = 3

    @classmethod
    def create(cls, n_agents, edges, leader_access, state_dim=3) -> "Topology":
        """Build a Topology, normalizing and checking well-formedness."""
        if n_agents < 1:
            raise TopologyError(f"need at least one agent, got {n_agents}")
        if state_dim < 1:
            raise TopologyError(f"state_dim must be positive, got {state_dim}")
        if len(leader_access) != n_agents:
            raise TopologyError(
                f"leader_access has {len(leader_access)} entries for {n_agents} agents"
            )
        bits = tuple(int(b) for b in leader_access)
        if any(b not in (0, 1) for b in bits):
            raise TopologyError("leader_access entries must be 0 or 1")
        norm = set()
        for e in edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise TopologyError(f"self-loop ({i},{i}) is not allowed")
            if not (1 <= i <= n_agents and 1 <= j <= n_agents):
                raise TopologyError(f"edge ({i},{j}) out of range 1..{n_agents}")
            norm.add((min(i, j), max(i, j)))
        return cls(n_agents, frozenset(norm), bits, state_dim)

    def neighbors(self, i: int) -> list[int]:
        """Ascending neighbor indices of agent i (leader excluded)."""
        if not 1 <= i <= self.n_agents:
            raise IndexError(f"agent index {i} out of range 1..{self.n_agents}")
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def leader_flag(self, i: int) -> int:
        if not 1 <= i <= self.n_agents:
            raise IndexError(f"agent index {i} out of range 1..{self.n_agents}")
        return self.leader_access[i - 1]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents))
        for i, j in self.edges:
            a[i - 1, j - 1] = 1.0
            a[j - 1, i - 1] = 1.0
        return a

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "edges": sorted([list(e) for e in self.edges]),
            "leader_access": list(self.leader_access),
            "state_dim": self.state_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        try:
            return cls.create(
                d["n_agents"], d["edges"], d["leader_access"], d.get("state_dim", 3)
            )
        except KeyError as k:
            raise TopologyError(f"topology dict missing key {k}") from k


def validate(topo: Topology) -> bool:
    """True iff the follower graph is connected and some agent sees the leader."""
    if sum(topo.leader_access) == 0:
        return False
    return _connected(topo)


def _connected(topo: Topology) -> bool:
    if topo.n_agents == 1:
        return True
    adj = {i: [] for i in range(1, topo.n_agents + 1)}
    for i, j in topo.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {1}
    queue = deque([1])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == topo.n_agents


@dataclass(frozen=True)
class DerivedMatrices:
    """Laplacian-based matrices of a validated topology.

    H = (L + B) kron I_n maps stacked disagreements to stacked local errors;
    sigma_min_h is its smallest singular value, which for the symmetric
    positive definite L + B equals the smallest eigenvalue of L + B.
    """

    laplacian: np.ndarray
    lb: np.ndarray
    h: np.ndarray
    h_inv: np.ndarray
    sigma_min_h: float
    lb_inv: np.ndarray = field(repr=False, default=None)


def derive(topo: Topology) -> DerivedMatrices:
    """Compute L, L+B, H, H^-1 and sigma_min(H) for a validated topology."""
    if not validate(topo):
        raise AssumptionError(
            "topology must be connected with at least one leader-access agent"
        )
    n = topo.state_dim
    adj = topo.adjacency()
    deg = np.diag(adj.sum(axis=1))
    lap = deg - adj
    lb = lap + np.diag(np.asarray(topo.leader_access, dtype=float))
    eigvals = np.linalg.eigvalsh(lb)
    if eigvals[0] <= 0:
        raise AssumptionError(
            f"L+B is not positive definite (min eigenvalue {eigvals[0]:.3e})"
        )
    lb_inv = np.linalg.inv(lb)
    h = np.kron(lb, np.eye(n))
    h_inv = np.kron(lb_inv, np.eye(n))
    return DerivedMatrices(
        laplacian=lap,
        lb=lb,
        h=h,
        h_inv=h_inv,
        sigma_min_h=float(eigvals[0]),
        lb_inv=lb_inv,
    )


def h_apply(lb: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """Apply H = (L+B) kron I_n to a stacked vector without forming H."""
    m = lb.shape[0]
    return (lb @ v.reshape(m, n)).reshape(-1)


def neighbor_blocks(topo: Topology, i: int) -> tuple[list[int], int]:
    """Neighbor indices (ascending) and leader flag of agent i.

    This fixed ordering is shared by the error algebra and the neural-network
    input layout, so it must stay deterministic.
    """
    if not validate(topo):
        raise AssumptionError("topology failed validation")
    return topo.neighbors(i), topo.leader_flag(i)
