"""Experiment setups, data generation, and the policy comparison study.

Three setups are provided: stabilization around a circling leader,
a three-area surveillance task with switching offsets, and a randomized
study over many formation instances (random graphs, dynamics, offsets,
leader paths). Training data always comes from the white-box
data-generating controller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import TrajectoryData
from .dynamics import (
    AgentDynamicsParams,
    CircleProfile,
    FormationInstance,
    FormationOffsets,
    WaypointProfile,
    random_params,
)
from .engine import MonitorConfig, SimConfig, SimRecord, run
from .errors import GainSet
from .exceptions import ConfigError, DataError
from .policies import OraclePolicy, Policy
from .topology import Topology, validate

EXP1_EDGES = ((1, 2), (2, 3), (3, 4), (4, 5))
EXP1_LEADER_ACCESS = (1, 0, 1, 0, 1)
EXP1_EDGE_OFFSETS = {
    (1, 2): (1.0, 1.0, 0.0),
    (2, 3): (1.0, -1.0, 0.0),
    (3, 4): (0.0, -2.0, 0.0),
    (4, 5): (-2.0, 0.0, 0.0),
}
EXP1_LEADER_OFFSETS = {
    1: (1.0, -1.0, 0.0),
    3: (-1.0, -1.0, 0.0),
    5: (1.0, 1.0, 0.0),
}
EXP1_LEADER_POS0 = np.array([5.0, 2.0, 10.0])
EXP1_LEADER_VEL0 = np.array([0.0039, -0.9836, 0.0])
EXP1_HORIZON = 55.0

EXP2_AREA_CENTERS = (
    # first listed region of each area; the leader's waypoint for that area
    (-50.0, -50.0, -10.0),
    (50.0, 50.0, 10.0),
    (50.0, -50.0, 10.0),
)
EXP2_EDGE_OFFSETS = (
    {
        (1, 2): (10.0, 10.0, 0.0),
        (2, 3): (20.0, 0.0, 0.0),
        (3, 4): (0.0, -20.0, 0.0),
        (4, 5): (-20.0, 0.0, 0.0),
    },
    {
        (1, 2): (0.0, 20.0, 0.0),
        (2, 3): (10.0, 0.0, 0.0),
        (3, 4): (10.0, -10.0, 0.0),
        (4, 5): (-10.0, -10.0, 0.0),
    },
    {
        (1, 2): (20.0, 0.0, 0.0),
        (2, 3): (0.0, -10.0, 0.0),
        (3, 4): (-20.0, -10.0, 0.0),
        (4, 5): (0.0, 10.0, 0.0),
    },
)
EXP2_LEADER_OFFSETS = (
    {1: (20.0, 0.0, 0.0), 3: (-10.0, -10.0, 0.0), 5: (10.0, 10.0, 0.0)},
    {1: (10.0, 10.0, 0.0), 3: (0.0, -10.0, 0.0), 5: (10.0, 10.0, 0.0)},
    {1: (10.0, -10.0, 0.0), 3: (-10.0, 0.0, 0.0), 5: (10.0, 0.0, 0.0)},
)
EXP2_LEADER_START = (0.0, 0.0, 10.0)
EXP2_HORIZON = 225.0
EXP2_SWITCH_TIMES = (75.0, 150.0)
EXP2_LEADER_TIMES = (0.0, 50.0, 150.0, 225.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """Counts, seeds, and step sizes of one experiment campaign."""

    kind: str
    base_seed: int = 0
    n_train_trajectories: int = 100
    sample_count: int = 500
    horizon: float = EXP1_HORIZON
    gen_dt: float = 5e-3          # step for oracle data-generation runs
    eval_dt: float = 1e-3         # step for closed-loop evaluation runs
    n_instances: int = 120        # randomized study only
    n_train_instances: int = 100
    n_test_instances: int = 20

    def __post_init__(self):
        if self.kind not in ("exp1_stabilization", "exp2_surveillance", "exp3_randomized"):
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if min(self.n_train_trajectories, self.sample_count) < 1:
            raise ConfigError("counts must be positive")
        if self.n_train_instances + self.n_test_instances > self.n_instances:
            raise ConfigError("train/test split exceeds the instance count")


def desk_scale_exp3(base_seed: int = 0, full: bool = False) -> ExperimentSpec:
    """Randomized-study spec; desk scale unless `full` restores 100/20."""
    if full:
        return ExperimentSpec(
            kind="exp3_randomized", base_seed=base_seed, horizon=40.0,
            n_instances=120, n_train_instances=100, n_test_instances=20,
            eval_dt=2e-3,
        )
    return ExperimentSpec(
        kind="exp3_randomized", base_seed=base_seed, horizon=40.0,
        n_instances=25, n_train_instances=20, n_test_instances=5,
        eval_dt=2e-3,
    )


def exp1_topology() -> Topology:
    return Topology.create(5, EXP1_EDGES, EXP1_LEADER_ACCESS, state_dim=3)


def exp1_leader() -> CircleProfile:
    return CircleProfile.from_initial_state(EXP1_LEADER_POS0, EXP1_LEADER_VEL0, radius=5.0)


def exp1_offsets() -> FormationOffsets:
    return FormationOffsets(
        {k: np.array(v) for k, v in EXP1_EDGE_OFFSETS.items()},
        {k: np.array(v) for k, v in EXP1_LEADER_OFFSETS.items()},
    )


def _random_x_init(
    rng: np.random.Generator,
    n_agents: int,
    pos_center: np.ndarray,
    pos_range: float,
    vel_range: float,
) -> np.ndarray:
    """Initial state per the experiments: one scalar spread per agent, times ones."""
    ones = np.ones(3)
    pos = np.stack(
        [pos_center + rng.uniform(-pos_range, pos_range) * ones for _ in range(n_agents)]
    )
    vel = np.stack(
        [rng.uniform(-vel_range, vel_range) * ones for _ in range(n_agents)]
    )
    return np.concatenate([pos.reshape(-1), vel.reshape(-1)])


def make_exp1(seed: int = 0) -> tuple[FormationInstance, ExperimentSpec]:
    """The stabilization task: five agents form up around a circling leader."""
    rng = np.random.default_rng(seed)
    dyn = [random_params(rng) for _ in range(5)]
    leader = exp1_leader()
    x_init = _random_x_init(rng, 5, EXP1_LEADER_POS0, 4.0, 2.0)
    inst = FormationInstance(
        leader=leader, dyn=dyn, offsets=exp1_offsets(),
        topology=exp1_topology(), x_init=x_init, seed=seed,
    )
    spec = ExperimentSpec(kind="exp1_stabilization", base_seed=seed)
    return inst, spec


def exp1_training_instances(n: int, seed: int = 0) -> list[FormationInstance]:
    """Trajectory-generation instances: same task, fresh dynamics and x(0)."""
    topo = exp1_topology()
    leader = exp1_leader()
    offsets = exp1_offsets()
    out = []
    for k in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, k]))
        dyn = [random_params(rng) for _ in range(5)]
        x_init = _random_x_init(rng, 5, EXP1_LEADER_POS0, 4.0, 2.0)
        out.append(
            FormationInstance(
                leader=leader, dyn=dyn, offsets=offsets, topology=topo,
                x_init=x_init, seed=k,
            )
        )
    return out


@dataclass
class Exp2Schedule:
    """Surveillance task: one leader path, offsets switching between areas."""

    topology: Topology
    leader: WaypointProfile
    dyn: list[AgentDynamicsParams]
    areas: list[FormationOffsets]
    switch_times: tuple[float, ...]
    horizon: float
    x_init: np.ndarray
    seed: int

    def segments(self) -> list[tuple[float, float, FormationOffsets]]:
        bounds = [0.0, *self.switch_times, self.horizon]
        return [
            (bounds[k], bounds[k + 1], self.areas[k]) for k in range(len(self.areas))
        ]

    def instance_for(self, offsets: FormationOffsets, x_init: np.ndarray) -> FormationInstance:
        return FormationInstance(
            leader=self.leader, dyn=self.dyn, offsets=offsets,
            topology=self.topology, x_init=x_init, seed=self.seed,
        )


def make_exp2(seed: int = 0) -> tuple[Exp2Schedule, ExperimentSpec]:
    """Surveillance setup: waypoints at the first region of each area."""
    rng = np.random.default_rng(seed)
    dyn = [random_params(rng) for _ in range(5)]
    leader = WaypointProfile(
        np.array([EXP2_LEADER_START, *EXP2_AREA_CENTERS]),
        total_duration=EXP2_HORIZON,
        times=EXP2_LEADER_TIMES,
    )
    areas = [
        FormationOffsets(
            {k: np.array(v) for k, v in EXP2_EDGE_OFFSETS[a].items()},
            {k: np.array(v) for k, v in EXP2_LEADER_OFFSETS[a].items()},
        )
        for a in range(3)
    ]
    x_init = _random_x_init(rng, 5, np.array(EXP2_LEADER_START), 10.0, 2.0)
    sched = Exp2Schedule(
        topology=exp1_topology(), leader=leader, dyn=dyn, areas=areas,
        switch_times=EXP2_SWITCH_TIMES, horizon=EXP2_HORIZON,
        x_init=x_init, seed=seed,
    )
    spec = ExperimentSpec(
        kind="exp2_surveillance", base_seed=seed, horizon=EXP2_HORIZON
    )
    return sched, spec


def run_schedule(
    sched: Exp2Schedule,
    policy: Policy,
    sim: SimConfig,
    mon: MonitorConfig,
    gains: GainSet,
    d_hat_init: float = 0.1,
) -> list[SimRecord]:
    """Run the switching-offset schedule, chaining state and adaptation."""
    records = []
    x_cur = sched.x_init
    d_cur = None
    for t_start, t_end, offsets in sched.segments():
        inst = sched.instance_for(offsets, x_cur)
        seg_sim = SimConfig(
            dt=sim.dt, duration=t_end - t_start, integrator=sim.integrator,
            record_stride=sim.record_stride, seed=sim.seed,
            blowup_norm=sim.blowup_norm,
        )
        rec = run(
            inst, policy, seg_sim, mon, gains,
            t0=t_start, x0=x_cur, d_hat0=d_cur, d_hat_init=d_hat_init,
        )
        records.append(rec)
        if rec.status != "completed":
            break
        x_cur = rec.x[-1]
        d_cur = rec.d_hat[-1]
    return records


def merge_records(records: list[SimRecord]) -> SimRecord:
    """Concatenate sequential segment records into one (boundary rows deduped)."""
    if not records:
        raise ConfigError("no records to merge")
    if len(records) == 1:
        return records[0]
    parts = {name: [] for name in (
        "time", "x", "x0_pos", "x0_vel", "x0_acc", "u", "u_nn",
        "e1", "e1_dot", "e2", "delta1", "d_hat", "ch", "g_min", "v1", "v2",
    )}
    for k, rec in enumerate(records):
        start = 1 if k > 0 else 0  # segment k starts where k-1 ended
        for name in parts:
            parts[name].append(getattr(rec, name)[start:])
    merged = {name: np.concatenate(vals) for name, vals in parts.items()}
    meta = dict(records[0].meta)
    meta["segments"] = len(records)
    meta["g_lower"] = float(min(r.meta["g_lower"] for r in records))
    return SimRecord(status=records[-1].status, meta=meta, **merged)


def exp2_training_schedules(n: int, seed: int = 0) -> list[Exp2Schedule]:
    """Surveillance data-generation schedules: fresh dynamics and x(0) per run."""
    base, _ = make_exp2(seed=seed)
    out = []
    for k in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, k]))
        dyn = [random_params(rng) for _ in range(5)]
        x_init = _random_x_init(rng, 5, np.array(EXP2_LEADER_START), 10.0, 2.0)
        out.append(
            Exp2Schedule(
                topology=base.topology, leader=base.leader, dyn=dyn,
                areas=base.areas, switch_times=base.switch_times,
                horizon=base.horizon, x_init=x_init, seed=k,
            )
        )
    return out


def generate_exp2_training_data(
    n: int, seed: int, sim: SimConfig, gains: GainSet
) -> tuple[list[TrajectoryData], list[dict]]:
    """Oracle trajectories over the full switching schedule.

    Each segment is rolled out for all runs jointly (they share the leader
    and per-segment offsets); states chain across switches.
    """
    schedules = exp2_training_schedules(n, seed=seed)
    base = schedules[0]
    xs = np.stack([s.x_init for s in schedules])
    times_parts, state_parts, control_parts = [], [], []
    bad = set()
    for t_start, t_end, offsets in base.segments():
        seg_sim = SimConfig(
            dt=sim.dt, duration=t_end - t_start, integrator=sim.integrator,
            record_stride=sim.record_stride, seed=sim.seed,
            blowup_norm=sim.blowup_norm,
        )
        instances = [s.instance_for(offsets, x) for s, x in zip(schedules, xs)]
        times, states, controls, newly_bad = _rollout_batch_arrays(
            instances, seg_sim, gains, t0=t_start, x0=xs
        )
        bad |= newly_bad
        first = len(times_parts) == 0
        times_parts.append(times if first else times[1:])
        state_parts.append(states if first else states[:, 1:])
        control_parts.append(controls if first else controls[:, 1:])
        xs = states[:, -1]
    times = np.concatenate(times_parts)
    states = np.concatenate(state_parts, axis=1)
    controls = np.concatenate(control_parts, axis=1)
    trajectories, skipped = [], []
    for idx in range(n):
        if idx in bad or not np.all(np.isfinite(states[idx])):
            skipped.append({"instance": idx, "status": "diverged", "t_final": None})
            continue
        trajectories.append(
            TrajectoryData(
                times=times.copy(), states=states[idx], controls=controls[idx],
                topology=base.topology,
            )
        )
    return trajectories, skipped


def _random_tree_edges(rng: np.random.Generator, n: int) -> set[tuple[int, int]]:
    """Random attachment tree over agents 1..n (connected by construction)."""
    order = rng.permutation(np.arange(1, n + 1))
    edges = set()
    for k in range(1, n):
        a = int(order[k])
        b = int(order[rng.integers(0, k)])
        edges.add((min(a, b), max(a, b)))
    return edges


def random_topology(rng: np.random.Generator, n_agents: int = 5, extra_density: float = 0.4) -> Topology:
    """Connected follower graph with leader access on at least one agent."""
    edges = _random_tree_edges(rng, n_agents)
    for i in range(1, n_agents + 1):
        for j in range(i + 1, n_agents + 1):
            if rng.uniform() < extra_density:
                edges.add((i, j))
    while True:
        bits = (rng.uniform(size=n_agents) < 0.5).astype(int)
        if bits.sum() >= 1:
            break
    topo = Topology.create(n_agents, edges, bits, state_dim=3)
    if not validate(topo):
        raise DataError("random topology failed validation")  # unreachable: tree + >=1 bit
    return topo


def random_feasible_offsets(
    rng: np.random.Generator, topo: Topology, anchor_range: float = 2.5
) -> FormationOffsets:
    """Offsets from per-agent anchors, so a consistent formation exists.

    Anchors a_i are scalars in (-anchor_range, anchor_range); the implied
    pairwise offsets (a_j - a_i) * ones stay within twice that range.
    """
    ones = np.ones(topo.state_dim)
    anchors = rng.uniform(-anchor_range, anchor_range, topo.n_agents)
    edge_offsets = {
        (i, j): (anchors[j - 1] - anchors[i - 1]) * ones for i, j in sorted(topo.edges)
    }
    leader_offsets = {
        i: -anchors[i - 1] * ones
        for i in range(1, topo.n_agents + 1)
        if topo.leader_flag(i)
    }
    return FormationOffsets(edge_offsets, leader_offsets, n=topo.state_dim)


def random_leader_path(rng: np.random.Generator, duration: float = 40.0) -> WaypointProfile:
    """Smooth path through four random points, visited in a random order."""
    pts = np.column_stack([
        rng.uniform(-10.0, 10.0, 4),
        rng.uniform(-10.0, 10.0, 4),
        rng.uniform(1.0, 20.0, 4),
    ])
    order = rng.permutation(4)
    return WaypointProfile(pts[order], total_duration=duration)


def make_exp3(spec: ExperimentSpec) -> list[FormationInstance]:
    """Randomized formation instances (graphs, dynamics, offsets, leaders)."""
    out = []
    for k in range(spec.n_instances):
        rng = np.random.default_rng(np.random.SeedSequence([spec.base_seed, 3, k]))
        topo = random_topology(rng)
        dyn = [random_params(rng) for _ in range(topo.n_agents)]
        offsets = random_feasible_offsets(rng, topo)
        leader = random_leader_path(rng, duration=spec.horizon)
        ones = np.ones(3)
        pos = np.stack(
            [rng.uniform(-10.0, 10.0) * ones for _ in range(topo.n_agents)]
        )
        vel = np.stack(
            [rng.uniform(-2.5, 2.5) * ones for _ in range(topo.n_agents)]
        )
        x_init = np.concatenate([pos.reshape(-1), vel.reshape(-1)])
        out.append(
            FormationInstance(
                leader=leader, dyn=dyn, offsets=offsets, topology=topo,
                x_init=x_init, seed=k,
            )
        )
    return out


def split_exp3(instances: list[FormationInstance], spec: ExperimentSpec):
    train = instances[: spec.n_train_instances]
    test = instances[spec.n_instances - spec.n_test_instances :]
    return train, test


def generate_training_data(
    instances: list[FormationInstance],
    sim: SimConfig,
    gains: GainSet,
    mon: MonitorConfig = None,
    batch: bool = None,
) -> tuple[list[TrajectoryData], list[dict]]:
    """Oracle runs over the instances; diverged runs are skipped with a report.

    When all instances share the topology, leader, and offsets (the
    stabilization and surveillance campaigns do), the closed loops are
    integrated jointly as one stacked ODE, which is much faster than
    one run() per instance. `batch=None` auto-detects that case.
    """
    mon = mon or MonitorConfig()
    if batch is None:
        batch = _batch_compatible(instances)
    elif batch and not _batch_compatible(instances):
        raise ConfigError("instances differ in topology/leader/offsets; cannot batch")
    if batch and len(instances) > 1:
        return _generate_batch(instances, sim, gains)
    policy = OraclePolicy()
    trajectories, skipped = [], []
    for idx, inst in enumerate(instances):
        rec = run(inst, policy, sim, mon, gains)
        if rec.status != "completed":
            skipped.append(
                {"instance": idx, "status": rec.status, "t_final": float(rec.time[-1])}
            )
            continue
        trajectories.append(
            TrajectoryData(
                times=rec.time, states=rec.x, controls=rec.u, topology=inst.topology
            )
        )
    return trajectories, skipped


def _batch_compatible(instances: list[FormationInstance]) -> bool:
    if len(instances) < 2:
        return False
    head = instances[0]
    topo = head.topology.to_dict()
    leader = head.leader.to_dict()
    offs = head.offsets.to_entries()
    return all(
        inst.topology.to_dict() == topo
        and inst.leader.to_dict() == leader
        and inst.offsets.to_entries() == offs
        for inst in instances[1:]
    )


def _generate_batch(
    instances: list[FormationInstance],
    sim: SimConfig,
    gains: GainSet,
) -> tuple[list[TrajectoryData], list[dict]]:
    """Stacked oracle rollout over instances sharing task and graph."""
    times, states, controls, bad = _rollout_batch_arrays(instances, sim, gains)
    trajectories, skipped = [], []
    for idx, inst in enumerate(instances):
        if idx in bad:
            skipped.append({"instance": idx, "status": "diverged", "t_final": None})
            continue
        trajectories.append(
            TrajectoryData(
                times=times.copy(),
                states=states[idx],
                controls=controls[idx],
                topology=inst.topology,
            )
        )
    return trajectories, skipped


def _rollout_batch_arrays(
    instances: list[FormationInstance],
    sim: SimConfig,
    gains: GainSet,
    t0: float = 0.0,
    x0: np.ndarray = None,
):
    """Joint oracle integration of K instances; returns raw arrays.

    Integrates all K closed loops as one (K, 2Nn) ODE. The per-step
    blow-up guard of the single-instance engine is replaced by a final
    finiteness scan (the oracle loop is linear and stable in the error
    coordinates, so divergence indicates a degenerate instance, which is
    reported through the returned index set).
    """
    from .dynamics import GRAVITY, velocity_monomials
    from .errors import offsets_to_c

    head = instances[0]
    topo = head.topology
    N, n = topo.n_agents, topo.state_dim
    nn = N * n
    K = len(instances)
    lb = head.derived.lb
    c_agents = offsets_to_c(topo, head.offsets).c.reshape(N, n)
    k1 = gains.k1[:, None]
    leader = head.leader

    mass = np.stack([inst._mass for inst in instances])       # (K, N)
    amp = np.stack([inst._amp for inst in instances])         # (K, N, 3)
    freq = np.stack([inst._freq for inst in instances])
    phase = np.stack([inst._phase for inst in instances])
    fmat = np.stack([inst._fmat for inst in instances])       # (K, N, 3, 6)

    def oracle_terms(t: float, xs: np.ndarray):
        """(velocities, controls, f, g) of all instances at one time."""
        x01, x02, u0 = leader.state(t)
        pos = xs[:, :nn].reshape(K, N, n)
        vel = xs[:, nn:].reshape(K, N, n)
        e1 = np.matmul(lb, pos - x01 + c_agents)
        e2 = np.matmul(lb, vel - x02) + k1 * e1
        d1 = amp * np.sin(freq * t + phase)
        d2 = np.matmul(fmat, velocity_monomials(vel)[..., None])[..., 0]
        f = (GRAVITY + d1 + d2) / mass[..., None]
        norms = np.sqrt((pos * pos).sum(-1) + (vel * vel).sum(-1))
        g = (norms + 0.5 * np.sin(0.1 * t) + 1.0) / mass
        u = (u0 - e2 - f) / g[..., None]
        return vel, u, f, g

    def rhs(t: float, xs: np.ndarray) -> np.ndarray:
        vel, u, f, g = oracle_terms(t, xs)
        acc = f + g[..., None] * u
        return np.concatenate([vel.reshape(K, nn), acc.reshape(K, nn)], axis=1)

    xs = (
        np.stack([inst.x_init for inst in instances])
        if x0 is None
        else np.asarray(x0, dtype=float)
    )
    n_steps = sim.n_steps
    stride = sim.record_stride
    rows = n_steps // stride + 1
    times = np.empty(rows)
    states = np.empty((K, rows, 2 * nn))
    controls = np.empty((K, rows, nn))
    written = 0
    for kstep in range(n_steps + 1):
        t = t0 + kstep * sim.dt
        if kstep % stride == 0:
            times[written] = t
            states[:, written] = xs
            controls[:, written] = oracle_terms(t, xs)[1].reshape(K, nn)
            written += 1
        if kstep == n_steps:
            break
        k1_ = rhs(t, xs)
        k2_ = rhs(t + 0.5 * sim.dt, xs + 0.5 * sim.dt * k1_)
        k3_ = rhs(t + 0.5 * sim.dt, xs + 0.5 * sim.dt * k2_)
        k4_ = rhs(t + sim.dt, xs + sim.dt * k3_)
        xs = xs + (sim.dt / 6.0) * (k1_ + 2.0 * (k2_ + k3_) + k4_)

    bad = {
        idx
        for idx in range(K)
        if not (
            np.all(np.isfinite(states[idx])) and np.all(np.isfinite(controls[idx]))
        )
    }
    return times, states, controls, bad


@dataclass
class ComparisonReport:
    """Aggregated policy comparison across instances (Fig.-10 style)."""

    time: np.ndarray
    per_policy: dict = field(default_factory=dict)

    def add(self, kind: str, series: list[np.ndarray], finals: list[float], divergences: int):
        stack = np.stack(series) if series else np.empty((0, len(self.time)))
        self.per_policy[kind] = {
            "divergences": divergences,
            "runs": len(series) + divergences,
            "final_errors": finals,
            "mean_final": float(np.mean(finals)) if finals else float("inf"),
            "std_final": float(np.std(finals)) if finals else float("nan"),
            "mean_series": stack.mean(axis=0) if len(stack) else np.full(len(self.time), np.nan),
            "std_series": stack.std(axis=0) if len(stack) else np.full(len(self.time), np.nan),
        }

    def to_dict(self) -> dict:
        out = {"time": self.time.tolist(), "policies": {}}
        for kind, d in self.per_policy.items():
            out["policies"][kind] = {
                "divergences": d["divergences"],
                "runs": d["runs"],
                "final_errors": [float(v) for v in d["final_errors"]],
                "mean_final": d["mean_final"],
                "std_final": d["std_final"],
                "mean_series": np.asarray(d["mean_series"]).tolist(),
                "std_series": np.asarray(d["std_series"]).tolist(),
            }
        return out


def evaluate_comparison(
    instances: list[FormationInstance],
    policies: dict[str, Policy],
    sim: SimConfig,
    mon: MonitorConfig,
    gains: GainSet,
    d_hat_init: float = 0.1,
) -> tuple[ComparisonReport, dict[str, list[SimRecord]]]:
    """Run every policy on every instance and aggregate the error metric.

    Statistics cover completed runs only; diverged runs are counted and
    reported separately.
    """
    rows = sim.n_steps // sim.record_stride + 1
    time = np.arange(rows) * sim.dt * sim.record_stride
    report = ComparisonReport(time=time)
    all_records: dict[str, list[SimRecord]] = {}
    for kind, policy in policies.items():
        series, finals, records = [], [], []
        divergences = 0
        for inst in instances:
            rec = run(inst, policy, sim, mon, gains, d_hat_init=d_hat_init)
            records.append(rec)
            if rec.status == "completed":
                metric = rec.error_metric()
                series.append(metric)
                finals.append(float(metric[-1]))
            else:
                divergences += 1
        report.add(kind, series, finals, divergences)
        all_records[kind] = records
    return report, all_records
