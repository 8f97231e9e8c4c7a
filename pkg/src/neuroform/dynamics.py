"""Agent and leader dynamics, and the formation-instance tuple.

Followers obey double-integrator dynamics with unknown drift f_i and
control direction g_i. The concrete family implemented here is the aerial
vehicle model used throughout the experiments:

    f_i(x_i, t) = (g_bar + d1_i(t) + F_i y_i(v)) / m_i
    g_i(x_i, t) = (|x_i| + 0.5 sin(0.1 t) + 1) / m_i * I_n

with g_bar = [0, 0, 9.81], sinusoidal disturbances d1_i, and quadratic
velocity coupling F_i y_i. The control direction is a positive scalar
multiple of the identity, so it is symmetric positive definite whenever
the scalar factor is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import AssumptionError, ConfigError, DimensionError
from .topology import Topology, derive, validate

GRAVITY = np.array([0.0, 0.0, 9.81])


@dataclass(frozen=True)
class AgentDynamicsParams:
    """Constants of one follower's dynamics (all drawn from (0,1))."""

    mass: float
    amp: np.ndarray        # (3,) sinusoid amplitudes
    freq: np.ndarray       # (3,) sinusoid frequencies
    phase: np.ndarray      # (3,) sinusoid phases
    f_mat: np.ndarray      # (3, 6) velocity-coupling matrix

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigError(f"mass must be positive, got {self.mass}")
        for name in ("amp", "freq", "phase"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise DimensionError(f"{name} must have shape (3,), got {v.shape}")
            object.__setattr__(self, name, v)
        fm = np.asarray(self.f_mat, dtype=float)
        if fm.shape != (3, 6):
            raise DimensionError(f"f_mat must have shape (3, 6), got {fm.shape}")
        object.__setattr__(self, "f_mat", fm)

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "amp": self.amp.tolist(),
            "freq": self.freq.tolist(),
            "phase": self.phase.tolist(),
            "f_mat": self.f_mat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentDynamicsParams":
        return cls(d["mass"], d["amp"], d["freq"], d["phase"], d["f_mat"])


def random_params(rng: np.random.Generator) -> AgentDynamicsParams:
    """Draw one agent's constants uniformly from the open unit interval.

    The mass is kept away from zero: 1/m scales both the drift and the
    control direction, and feedback through a huge control direction makes
    the closed loop too stiff for a fixed-step explicit integrator.
    """
    u = lambda *shape: rng.uniform(0.0, 1.0, shape)
    return AgentDynamicsParams(
        mass=float(rng.uniform(0.25, 1.0)),
        amp=u(3), freq=u(3), phase=u(3), f_mat=u(3, 6),
    )


# index pairs generating [v1^2, v2^2, v3^2, v1 v2, v1 v3, v2 v3]
_MONO_A = np.array([0, 1, 2, 0, 0, 1])
_MONO_B = np.array([0, 1, 2, 1, 2, 2])


def velocity_monomials(v: np.ndarray) -> np.ndarray:
    """Six symmetric quadratic monomials of a velocity vector (last axis 3)."""
    return v[..., _MONO_A] * v[..., _MONO_B]


def eval_f(p: AgentDynamicsParams, x_i: np.ndarray, t: float) -> np.ndarray:
    """Drift term f_i(x_i, t) for the experiment family (n = 3)."""
    x_i = np.asarray(x_i, dtype=float)
    if x_i.shape != (6,):
        raise DimensionError(f"agent state must have shape (6,), got {x_i.shape}")
    v = x_i[3:]
    d1 = p.amp * np.sin(p.freq * t + p.phase)
    # matmul with a trailing singleton axis: the bit-identical kernel the
    # stacked evaluator uses, so per-agent and stacked paths agree exactly
    d2 = np.matmul(p.f_mat, velocity_monomials(v)[:, None])[:, 0]
    return (GRAVITY + d1 + d2) / p.mass


def eval_g_scalar(p: AgentDynamicsParams, x_i: np.ndarray, t: float) -> float:
    """Scalar factor of the control direction g_i = factor * I."""
    x_i = np.asarray(x_i, dtype=float)
    half = x_i.shape[0] // 2
    # position/velocity partial sums, matching the stacked evaluator exactly
    norm = np.sqrt((x_i[:half] ** 2).sum() + (x_i[half:] ** 2).sum())
    factor = (norm + 0.5 * np.sin(0.1 * t) + 1.0) / p.mass
    if factor <= 0:
        raise AssumptionError(
            f"control direction lost positive definiteness (factor {factor:.3e})"
        )
    return float(factor)


def eval_g(p: AgentDynamicsParams, x_i: np.ndarray, t: float) -> np.ndarray:
    """Control-direction matrix g_i(x_i, t), positive definite by construction."""
    return eval_g_scalar(p, x_i, t) * np.eye(3)


class LeaderProfile:
    """Reference trajectory generator: state(t) -> (position, velocity, command)."""

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "LeaderProfile":
        kind = d.get("kind")
        if kind == "waypoint_path":
            return WaypointProfile(
                np.asarray(d["waypoints"], dtype=float),
                total_duration=d["total_duration"],
                times=d.get("times"),
            )
        if kind == "parametric":
            shape = d.get("shape")
            if shape == "circle":
                return CircleProfile(
                    center=np.asarray(d["center"], dtype=float),
                    radius=d["radius"],
                    omega=d["omega"],
                    theta0=d["theta0"],
                )
            if shape == "linear":
                return LinearProfile(
                    np.asarray(d["position"], dtype=float),
                    np.asarray(d["velocity"], dtype=float),
                )
            raise ConfigError(f"unknown parametric leader shape {shape!r}")
        raise ConfigError(f"unknown leader kind {kind!r}")


@dataclass(frozen=True)
class LinearProfile(LeaderProfile):
    """Constant-velocity leader (zero command signal)."""

    position: np.ndarray
    velocity: np.ndarray

    def state(self, t):
        return (
            self.position + self.velocity * t,
            self.velocity.copy(),
            np.zeros_like(self.position),
        )

    def to_dict(self):
        return {
            "kind": "parametric",
            "shape": "linear",
            "position": self.position.tolist(),
            "velocity": self.velocity.tolist(),
        }


@dataclass(frozen=True)
class CircleProfile(LeaderProfile):
    """Horizontal circular path at constant angular rate.

    position(t) = center + radius [cos th(t), sin th(t), 0], th = theta0 + omega t.
    """

    center: np.ndarray
    radius: float
    omega: float
    theta0: float

    @classmethod
    def from_initial_state(cls, p0, v0, radius: float) -> "CircleProfile":
        """Counter-clockwise circle matching an initial position and velocity.

        The initial velocity must be horizontal; its magnitude sets the
        angular rate omega = |v0| / radius.
        """
        p0 = np.asarray(p0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        if abs(v0[2]) > 1e-12:
            raise ConfigError("circle profile requires horizontal initial velocity")
        speed = float(np.hypot(v0[0], v0[1]))
        if speed <= 0:
            raise ConfigError("circle profile requires nonzero initial speed")
        tx, ty = v0[0] / speed, v0[1] / speed
        center = p0 + radius * np.array([-ty, tx, 0.0])
        theta0 = float(np.arctan2(p0[1] - center[1], p0[0] - center[0]))
        return cls(center=center, radius=radius, omega=speed / radius, theta0=theta0)

    def state(self, t):
        th = self.theta0 + self.omega * t
        c, s = np.cos(th), np.sin(th)
        pos = self.center + self.radius * np.array([c, s, 0.0])
        vel = self.radius * self.omega * np.array([-s, c, 0.0])
        acc = -self.radius * self.omega**2 * np.array([c, s, 0.0])
        return pos, vel, acc

    def to_dict(self):
        return {
            "kind": "parametric",
            "shape": "circle",
            "center": self.center.tolist(),
            "radius": self.radius,
            "omega": self.omega,
            "theta0": self.theta0,
        }


class WaypointProfile(LeaderProfile):
    """Smooth path through waypoints: clamped cubic spline, zero end velocity.

    The spline is C^2 on [0, total_duration]; afterwards the position holds
    the final waypoint with zero velocity and command. A single waypoint
    degenerates to a stationary leader.
    """

    def __init__(self, waypoints, total_duration: float, times=None):
        wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if wp.size == 0:
            raise ConfigError("waypoint list is empty")
        if wp.shape[1] != 3:
            raise DimensionError(f"waypoints must be 3-vectors, got shape {wp.shape}")
        if total_duration <= 0:
            raise ConfigError("total_duration must be positive")
        self.waypoints = wp
        self.total_duration = float(total_duration)
        if times is None:
            times = np.linspace(0.0, self.total_duration, len(wp))
        self.times = np.asarray(times, dtype=float)
        if len(self.times) != len(wp):
            raise ConfigError("visit times must match the number of waypoints")
        if len(wp) == 1:
            self._spline = None
        else:
            if np.any(np.diff(self.times) <= 0):
                raise ConfigError("visit times must be strictly increasing")
            self._spline = CubicSpline(self.times, wp, bc_type="clamped", axis=0)
            self._dspline = self._spline.derivative(1)
            self._ddspline = self._spline.derivative(2)

    def state(self, t):
        if self._spline is None:
            w = self.waypoints[0]
            return w.copy(), np.zeros(3), np.zeros(3)
        t0, t1 = self.times[0], self.times[-1]
        if t <= t0:
            return self.waypoints[0].copy(), np.zeros(3), np.zeros(3)
        if t >= t1:
            return self.waypoints[-1].copy(), np.zeros(3), np.zeros(3)
        return self._spline(t), self._dspline(t), self._ddspline(t)

    def to_dict(self):
        return {
            "kind": "waypoint_path",
            "waypoints": self.waypoints.tolist(),
            "total_duration": self.total_duration,
            "times": self.times.tolist(),
        }


class FormationOffsets:
    """Desired relative offsets c_ij on follower edges and c_i0 to the leader.

    Only one orientation per follower pair is stored; the opposite sign is
    implied by the antisymmetry c_ij = -c_ji.
    """

    def __init__(self, edge_offsets: dict, leader_offsets: dict, n: int = 3):
        self.n = n
        self._edges: dict[tuple[int, int], np.ndarray] = {}
        for (i, j), c in edge_offsets.items():
            c = np.asarray(c, dtype=float)
            if c.shape != (n,):
                raise DimensionError(f"offset c[{i},{j}] must have shape ({n},)")
            key = (min(i, j), max(i, j))
            cc = c if i < j else -c
            if key in self._edges and not np.array_equal(self._edges[key], cc):
                raise ConfigError(f"offsets for edge {key} are not antisymmetric")
            self._edges[key] = cc
        self._leader: dict[int, np.ndarray] = {}
        for i, c in leader_offsets.items():
            c = np.asarray(c, dtype=float)
            if c.shape != (n,):
                raise DimensionError(f"offset c[{i},0] must have shape ({n},)")
            self._leader[int(i)] = c

    def offset(self, i: int, j: int) -> np.ndarray:
        """c_ij for follower pair (i, j); sign handled by orientation."""
        key = (min(i, j), max(i, j))
        if key not in self._edges:
            raise ConfigError(f"no offset defined for edge ({i},{j})")
        c = self._edges[key]
        return c if i < j else -c

    def leader_offset(self, i: int) -> np.ndarray:
        if i not in self._leader:
            raise ConfigError(f"no leader offset defined for agent {i}")
        return self._leader[i]

    def validate_against(self, topo: Topology) -> None:
        """Every graph edge and leader link must carry an offset."""
        for e in topo.edges:
            if e not in self._edges:
                raise ConfigError(f"missing offset for edge {e}")
        for i, b in enumerate(topo.leader_access, start=1):
            if b and i not in self._leader:
                raise ConfigError(f"missing leader offset for agent {i} (b_{i}=1)")

    def to_entries(self) -> list[dict]:
        out = [
            {"i": i, "j": j, "c": c.tolist()} for (i, j), c in sorted(self._edges.items())
        ]
        out += [{"i": i, "j": 0, "c": c.tolist()} for i, c in sorted(self._leader.items())]
        return out

    @classmethod
    def from_entries(cls, entries, n: int = 3) -> "FormationOffsets":
        edges, leader = {}, {}
        for e in entries:
            i, j, c = int(e["i"]), int(e["j"]), e["c"]
            if j == 0:
                leader[i] = c
            elif i == 0:
                raise ConfigError("leader offsets must be written as (i, 0)")
            else:
                edges[(i, j)] = c
        return cls(edges, leader, n=n)


def offset_consistency_residual(topo: Topology, offsets: FormationOffsets) -> float:
    """Least-squares residual of the pairwise offset system.

    Zero (up to rounding) means the formation set is non-empty: positions
    exist that satisfy every edge and leader offset exactly. The published
    surveillance constants are not all consistent, so this is reported
    rather than enforced.
    """
    n = topo.state_dim
    rows, rhs = [], []
    for (i, j) in sorted(topo.edges):
        # x_i - x_j = -c_ij
        row = np.zeros(topo.n_agents)
        row[i - 1], row[j - 1] = 1.0, -1.0
        rows.append(row)
        rhs.append(-offsets.offset(i, j))
    for i, b in enumerate(topo.leader_access, start=1):
        if b:
            row = np.zeros(topo.n_agents)
            row[i - 1] = 1.0
            rows.append(row)
            rhs.append(-offsets.leader_offset(i))  # leader pinned at origin
    a = np.kron(np.array(rows), np.eye(n))
    b_vec = np.concatenate(rhs)
    sol, *_ = np.linalg.lstsq(a, b_vec, rcond=None)
    return float(np.linalg.norm(a @ sol - b_vec))


@dataclass
class FormationInstance:
    """One formation task: leader profile, dynamics, offsets, graph, x(0).

    The state vector is stacked as [positions; velocities], each of size
    N*n, agents in ascending index order. Instances are immutable by
    convention; derived quantities are cached on first use.
    """

    leader: LeaderProfile
    dyn: list[AgentDynamicsParams]
    offsets: FormationOffsets
    topology: Topology
    x_init: np.ndarray
    seed: int | None = None
    offset_residual: float = field(init=False, default=0.0)

    def __post_init__(self):
        topo = self.topology
        if not validate(topo):
            raise AssumptionError("instance topology failed validation")
        if len(self.dyn) != topo.n_agents:
            raise ConfigError(
                f"{len(self.dyn)} dynamics records for {topo.n_agents} agents"
            )
        self.x_init = np.asarray(self.x_init, dtype=float)
        want = 2 * topo.n_agents * topo.state_dim
        if self.x_init.shape != (want,):
            raise DimensionError(f"x_init must have shape ({want},)")
        self.offsets.validate_against(topo)
        self.offset_residual = offset_consistency_residual(topo, self.offsets)
        self._derived = derive(topo)
        # stacked parameter arrays for vectorized evaluation
        self._mass = np.array([p.mass for p in self.dyn])
        self._amp = np.stack([p.amp for p in self.dyn])
        self._freq = np.stack([p.freq for p in self.dyn])
        self._phase = np.stack([p.phase for p in self.dyn])
        self._fmat = np.stack([p.f_mat for p in self.dyn])

    @property
    def n_agents(self) -> int:
        return self.topology.n_agents

    @property
    def state_dim(self) -> int:
        return self.topology.state_dim

    @property
    def derived(self):
        return self._derived

    def split_state(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(positions, velocities) as (N, n) views of a stacked state."""
        nn = self.n_agents * self.state_dim
        if x.shape != (2 * nn,):
            raise DimensionError(f"state must have shape ({2 * nn},), got {x.shape}")
        n = self.state_dim
        return x[:nn].reshape(-1, n), x[nn:].reshape(-1, n)

    def f_stacked(self, x: np.ndarray, t: float) -> np.ndarray:
        """Drift of every agent, shape (N, n)."""
        pos, vel = self.split_state(x)
        d1 = self._amp * np.sin(self._freq * t + self._phase)
        d2 = np.matmul(self._fmat, velocity_monomials(vel)[..., None])[..., 0]
        return (GRAVITY + d1 + d2) / self._mass[:, None]

    def g_scalars(self, x: np.ndarray, t: float) -> np.ndarray:
        """Scalar control-direction factor of every agent, shape (N,)."""
        pos, vel = self.split_state(x)
        norms = np.sqrt((pos * pos).sum(axis=1) + (vel * vel).sum(axis=1))
        factors = (norms + 0.5 * np.sin(0.1 * t) + 1.0) / self._mass
        if np.any(factors <= 0):
            raise AssumptionError("control direction lost positive definiteness")
        return factors

    def dynamics_terms(self, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(f, g) of every agent in one pass (hot-loop helper)."""
        pos, vel = self.split_state(x)
        d1 = self._amp * np.sin(self._freq * t + self._phase)
        d2 = np.matmul(self._fmat, velocity_monomials(vel)[..., None])[..., 0]
        f = (GRAVITY + d1 + d2) / self._mass[:, None]
        norms = np.sqrt((pos * pos).sum(axis=1) + (vel * vel).sum(axis=1))
        g = (norms + 0.5 * np.sin(0.1 * t) + 1.0) / self._mass
        if np.any(g <= 0):
            raise AssumptionError("control direction lost positive definiteness")
        return f, g

    def to_dict(self) -> dict:
        return {
            "leader": self.leader.to_dict(),
            "dynamics": [p.to_dict() for p in self.dyn],
            "offsets": self.offsets.to_entries(),
            "topology": self.topology.to_dict(),
            "x_init": self.x_init.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FormationInstance":
        topo = Topology.from_dict(d["topology"])
        return cls(
            leader=LeaderProfile.from_dict(d["leader"]),
            dyn=[AgentDynamicsParams.from_dict(p) for p in d["dynamics"]],
            offsets=FormationOffsets.from_entries(d["offsets"], n=topo.state_dim),
            topology=topo,
            x_init=np.asarray(d["x_init"], dtype=float),
            seed=d.get("seed"),
        )


def leader_state(profile: LeaderProfile, t: float):
    """Leader (position, velocity, command) at time t >= 0."""
    if t < 0:
        raise ConfigError(f"leader state requested at negative time {t}")
    return profile.state(t)


def stacked_rhs(inst: FormationInstance, x: np.ndarray, u: np.ndarray, t: float) -> np.ndarray:
    """Time derivative of the stacked follower state under control u."""
    nn = inst.n_agents * inst.state_dim
    u = np.asarray(u, dtype=float)
    if u.shape != (nn,):
        raise DimensionError(f"control must have shape ({nn},), got {u.shape}")
    f = inst.f_stacked(x, t)
    g = inst.g_scalars(x, t)
    acc = f + g[:, None] * u.reshape(-1, inst.state_dim)
    return np.concatenate([x[nn:], acc.reshape(-1)])
