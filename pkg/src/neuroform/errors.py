"""Formation error algebra.

Local errors are built from neighbor and leader offsets,

    e_i1 = sum_{j in N_i} (x_i1 - x_j1 + c_ij) + b_i (x_i1 - x_01 + c_i0),

and stack to e1 = H (x1 - x01_bar + c) with c = H^-1 rhs(c_ij, c_i0).
The augmented error e2 = e1_dot + K1 e1 turns offset tracking into
stabilization of e2; the disagreement delta1 = x1 - x01_bar + c obeys
|delta1| <= |e1| / sigma_min(H).

Note: the stacked offset vector appears under two symbols in the source
material (c and c-bar); they are the same vector here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import FormationInstance, FormationOffsets
from .exceptions import ConfigError, DimensionError
from .topology import Topology, derive, h_apply


@dataclass(frozen=True)
class GainSet:
    """Per-agent positive gains k1 (error filter), k2 (feedback), mu1 (adaptation)."""

    k1: np.ndarray
    k2: np.ndarray
    mu1: np.ndarray

    def __post_init__(self):
        for name in ("k1", "k2", "mu1"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1:
                raise DimensionError(f"{name} must be a 1-d array of per-agent gains")
            if np.any(v <= 0):
                raise ConfigError(f"all {name} gains must be strictly positive")
            object.__setattr__(self, name, v)
        if not (len(self.k1) == len(self.k2) == len(self.mu1)):
            raise DimensionError("gain arrays must have equal length")

    @classmethod
    def uniform(cls, n_agents: int, k1=0.1, k2=0.5, mu1=0.5) -> "GainSet":
        """The gain choice used in all experiments: k1=0.1, k2=mu1=0.5."""
        ones = np.ones(n_agents)
        return cls(k1 * ones, k2 * ones, mu1 * ones)

    def k1_coord(self, n: int) -> np.ndarray:
        """k1 expanded to one entry per state coordinate (K1 diagonal)."""
        return np.repeat(self.k1, n)


@dataclass(frozen=True)
class OffsetVector:
    """Stacked leader-relative offsets c (one n-vector per agent)."""

    c: np.ndarray
    rhs: np.ndarray  # stacked sum_j c_ij + b_i c_i0 the solve was based on

    def per_agent(self, n: int) -> np.ndarray:
        return self.c.reshape(-1, n)


def local_error(
    topo: Topology,
    offsets: FormationOffsets,
    x1: np.ndarray,
    x01: np.ndarray,
    i: int,
) -> np.ndarray:
    """Locally measurable formation error of agent i.

    Uses only the states of agent i, its neighbors, and (when b_i = 1)
    the leader.
    """
    n = topo.state_dim
    xi = x1.reshape(-1, n)
    e = np.zeros(n)
    for j in topo.neighbors(i):
        e += xi[i - 1] - xi[j - 1] + offsets.offset(i, j)
    if topo.leader_flag(i):
        e += xi[i - 1] - np.asarray(x01, dtype=float) + offsets.leader_offset(i)
    return e


def offsets_to_c(topo: Topology, offsets: FormationOffsets) -> OffsetVector:
    """Solve H c = stacked(sum_j c_ij + b_i c_i0) for the per-agent offsets."""
    offsets.validate_against(topo)
    n = topo.state_dim
    dm = derive(topo)
    rhs = np.zeros((topo.n_agents, n))
    for i in range(1, topo.n_agents + 1):
        for j in topo.neighbors(i):
            rhs[i - 1] += offsets.offset(i, j)
        if topo.leader_flag(i):
            rhs[i - 1] += offsets.leader_offset(i)
    rhs = rhs.reshape(-1)
    c = h_apply(dm.lb_inv, rhs, n)
    return OffsetVector(c=c, rhs=rhs)


@dataclass(frozen=True)
class ErrorState:
    """All error signals of one state sample."""

    e1: np.ndarray
    e1_dot: np.ndarray
    e2: np.ndarray
    delta1: np.ndarray

    def agent(self, i: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(e_i1, e_i2) views for agent i (1-based)."""
        s = slice((i - 1) * n, i * n)
        return self.e1[s], self.e2[s]


def error_state_from_parts(
    lb: np.ndarray,
    c: np.ndarray,
    k1_coord: np.ndarray,
    x: np.ndarray,
    x01: np.ndarray,
    x02: np.ndarray,
    n: int,
) -> ErrorState:
    """Error signals from raw arrays (used by the engine's hot loop)."""
    m = lb.shape[0]
    nn = m * n
    delta1 = (x[:nn].reshape(m, n) - x01).reshape(-1) + c
    e1 = h_apply(lb, delta1, n)
    e1_dot = (lb @ (x[nn:].reshape(m, n) - x02)).reshape(-1)
    e2 = e1_dot + k1_coord * e1
    return ErrorState(e1=e1, e1_dot=e1_dot, e2=e2, delta1=delta1)


def error_state(
    inst: FormationInstance, x: np.ndarray, t: float, gains: GainSet
) -> ErrorState:
    """Error signals of a stacked state at time t against the instance's leader."""
    x01, x02, _ = inst.leader.state(t)
    c = offsets_to_c(inst.topology, inst.offsets).c
    return error_state_from_parts(
        inst.derived.lb, c, gains.k1_coord(inst.state_dim), x, x01, x02,
        inst.state_dim,
    )


def error_rhs(
    lb: np.ndarray,
    errs: ErrorState,
    f: np.ndarray,
    g_u: np.ndarray,
    ddx01: np.ndarray,
    k1_coord: np.ndarray,
    n: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative (e1_dot, e2_dot) of the error system.

    f and g_u are the stacked drift and control contributions (N*n,);
    ddx01 is the leader command stacked over agents.
    """
    e1_dot = -k1_coord * errs.e1 + errs.e2
    e2_dot = (
        h_apply(lb, f + g_u - ddx01, n)
        - k1_coord * (k1_coord * errs.e1)
        + k1_coord * errs.e2
    )
    return e1_dot, e2_dot


def delta_bound_holds(errs: ErrorState, sigma_min_h: float, rtol: float = 1e-9) -> bool:
    """Check |delta1| <= |e1| / sigma_min(H) up to a relative slack."""
    lhs = np.linalg.norm(errs.delta1)
    rhs = np.linalg.norm(errs.e1) / sigma_min_h
    return lhs <= rhs * (1.0 + rtol) + 1e-300
