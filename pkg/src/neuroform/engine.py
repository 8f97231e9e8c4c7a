"""Fixed-step closed-loop simulation with monitor signals.

One run integrates the follower states and the adaptation variables as a
single augmented ODE state [x; d_hat] while the leader is evaluated
analytically from its profile (its model is exactly integrable, so
feeding it through the integrator would only add error). Controllers
receive local observations only; the true dynamics are used by the
engine itself and by the recorded monitor signals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import make_nn_input, nn_input_layout, state_to_blocks
from .dynamics import FormationInstance
from .errors import GainSet, error_state_from_parts, offsets_to_c
from .exceptions import AssumptionError, ConfigError, DivergenceError
from .policies import LocalObservationBatch, Policy, PolicyKind
from .topology import h_apply

RECORD_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step integration settings."""

    dt: float = 1e-3
    duration: float = 10.0
    integrator: str = "rk4"
    record_stride: int = 1
    seed: int = 0
    blowup_norm: float = 1e6

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.duration < self.dt:
            raise ConfigError("duration must cover at least one step")
        if self.integrator not in ("rk4", "euler"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class MonitorConfig:
    """Growth-condition monitor settings.

    variant 'quadratic' subtracts kappa*|e2|^2 (the growth condition as
    stated); 'paper_linear' subtracts kappa*|e2| (the published monitor,
    whose kappa = 100). The default reproduces the published signal.
    """

    kappa: float = 100.0
    variant: str = "paper_linear"

    def __post_init__(self):
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.variant not in ("quadratic", "paper_linear"):
            raise ConfigError(f"unknown monitor variant {self.variant!r}")

    def bound(self, e2_norm: float) -> float:
        if self.variant == "quadratic":
            return self.kappa * e2_norm * e2_norm
        return self.kappa * e2_norm


def step_rk4(rhs, state: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step."""
    k1 = rhs(t, state)
    k2 = rhs(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = rhs(t + dt, state + dt * k3)
    incr = (k1 + 2.0 * (k2 + k3) + k4) / 6.0
    if not np.all(np.isfinite(incr)):
        raise DivergenceError(f"non-finite derivative at t={t:.6f}", t=t)
    return state + dt * incr


def step_euler(rhs, state: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Explicit Euler step (kept for cross-checks)."""
    k = rhs(t, state)
    if not np.all(np.isfinite(k)):
        raise DivergenceError(f"non-finite derivative at t={t:.6f}", t=t)
    return state + dt * k


@dataclass
class SimRecord:
    """Time-indexed log of one closed-loop run."""

    time: np.ndarray
    x: np.ndarray
    x0_pos: np.ndarray
    x0_vel: np.ndarray
    x0_acc: np.ndarray
    u: np.ndarray
    u_nn: np.ndarray
    e1: np.ndarray
    e1_dot: np.ndarray
    e2: np.ndarray
    delta1: np.ndarray
    d_hat: np.ndarray
    ch: np.ndarray
    g_min: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    status: str
    meta: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.d_hat.shape[1]

    @property
    def state_dim(self) -> int:
        return self.e1.shape[1] // self.n_agents

    def error_metric(self) -> np.ndarray:
        """|e1(t)| + |e1_dot(t)| for every recorded sample."""
        return np.linalg.norm(self.e1, axis=1) + np.linalg.norm(self.e1_dot, axis=1)

    def agent_error_metric(self, i: int) -> np.ndarray:
        n = self.state_dim
        sl = slice((i - 1) * n, i * n)
        return np.linalg.norm(self.e1[:, sl], axis=1) + np.linalg.norm(
            self.e1_dot[:, sl], axis=1
        )

    def e_norm(self) -> np.ndarray:
        """|[e1; e2]| per sample (operating-region diagnostic)."""
        return np.sqrt(
            np.linalg.norm(self.e1, axis=1) ** 2 + np.linalg.norm(self.e2, axis=1) ** 2
        )

    def summary(self) -> dict:
        ch_viol = int(np.sum(self.ch >= 0.0))
        out = {
            "schema_version": RECORD_SCHEMA_VERSION,
            "status": self.status,
            "samples": len(self.time),
            "t_final": float(self.time[-1]),
            "final_error_metric": float(self.error_metric()[-1]),
            "final_agent_error_metrics": [
                float(self.agent_error_metric(i)[-1])
                for i in range(1, self.n_agents + 1)
            ],
            "max_e_norm": float(self.e_norm().max()),
            "d_hat_final": self.d_hat[-1].tolist(),
            "ch_violations": ch_viol,
            "ch_violation_fraction": ch_viol / len(self.time),
            "g_lower": self.meta.get("g_lower"),
        }
        out.update(
            {k: self.meta[k] for k in ("policy", "dt", "record_stride", "t0", "variant", "kappa") if k in self.meta}
        )
        return out


def run(
    inst: FormationInstance,
    policy: Policy,
    sim: SimConfig,
    mon: MonitorConfig,
    gains: GainSet,
    t0: float = 0.0,
    x0: np.ndarray = None,
    d_hat0: np.ndarray = None,
    d_hat_init: float = 0.1,
) -> SimRecord:
    """Integrate the closed loop and record states, errors, and monitors.

    Divergence (non-finite state or |x| beyond the blow-up threshold) ends
    the run early with status 'diverged'; the truncated record is returned
    as data, not raised.
    """
    topo = inst.topology
    N, n = topo.n_agents, topo.state_dim
    nn = N * n
    dm = inst.derived
    lb = dm.lb
    c = offsets_to_c(topo, inst.offsets).c
    k1c = gains.k1_coord(n)
    if len(gains.k1) != N:
        raise ConfigError("gain arrays must have one entry per agent")

    masks = np.stack([nn_input_layout(topo, i)[0] for i in range(1, N + 1)])
    bits = np.stack([nn_input_layout(topo, i)[1] for i in range(1, N + 1)])

    x_start = inst.x_init if x0 is None else np.asarray(x0, dtype=float)
    if x_start.shape != (2 * nn,):
        raise ConfigError(f"x0 must have shape ({2 * nn},)")
    d_start = (
        np.full(N, d_hat_init) if d_hat0 is None else np.asarray(d_hat0, dtype=float)
    )
    if np.any(d_start <= 0):
        raise ConfigError("adaptation variables must start positive")
    z = np.concatenate([x_start, d_start])

    def eval_loop(t: float, zz: np.ndarray):
        """Controls, errors, and dynamics terms at one (t, state) point."""
        x = zz[:2 * nn]
        d_hat = zz[2 * nn:]
        x01, x02, u0 = inst.leader.state(t)
        errs = error_state_from_parts(lb, c, k1c, x, x01, x02, n)
        e2a = errs.e2.reshape(N, n)
        f, g = inst.dynamics_terms(x, t)
        if policy.white_box:
            u, u_nn = policy.controls_whitebox(inst, x, t, e2a, f, g, u0)
        else:
            xb = state_to_blocks(x, N, n)
            nn_in = np.hstack([xb[None, :] * masks, bits])
            obs = LocalObservationBatch(e2=e2a, nn_inputs=nn_in, d_hat=d_hat)
            u, u_nn = policy.controls(obs)
        return x, d_hat, errs, f, g, u, u_nn, u0

    def rhs(t: float, zz: np.ndarray) -> np.ndarray:
        x, d_hat, errs, f, g, u, u_nn, u0 = eval_loop(t, zz)
        acc = f + g[:, None] * u
        if policy.adapts:
            e2a = errs.e2.reshape(N, n)
            d_dot = gains.mu1 * (e2a * e2a).sum(axis=1)
        else:
            d_dot = np.zeros(N)
        return np.concatenate([x[nn:], acc.reshape(-1), d_dot])

    stepper = step_rk4 if sim.integrator == "rk4" else step_euler
    n_steps = sim.n_steps
    stride = sim.record_stride
    rows = n_steps // stride + 1

    rec = {
        "time": np.empty(rows),
        "x": np.empty((rows, 2 * nn)),
        "x0_pos": np.empty((rows, n)),
        "x0_vel": np.empty((rows, n)),
        "x0_acc": np.empty((rows, n)),
        "u": np.empty((rows, nn)),
        "u_nn": np.empty((rows, nn)),
        "e1": np.empty((rows, nn)),
        "e1_dot": np.empty((rows, nn)),
        "e2": np.empty((rows, nn)),
        "delta1": np.empty((rows, nn)),
        "d_hat": np.empty((rows, N)),
        "ch": np.empty(rows),
        "g_min": np.empty(rows),
    }

    status = "completed"
    written = 0
    for k in range(n_steps + 1):
        t = t0 + k * sim.dt
        if k % stride == 0:
            x, d_hat, errs, f, g, u, u_nn, u0 = eval_loop(t, z)
            x01, x02, _ = inst.leader.state(t)
            r = written
            rec["time"][r] = t
            rec["x"][r] = x
            rec["x0_pos"][r] = x01
            rec["x0_vel"][r] = x02
            rec["x0_acc"][r] = u0
            rec["u"][r] = u.reshape(-1)
            rec["u_nn"][r] = u_nn.reshape(-1)
            rec["e1"][r] = errs.e1
            rec["e1_dot"][r] = errs.e1_dot
            rec["e2"][r] = errs.e2
            rec["delta1"][r] = errs.delta1
            rec["d_hat"][r] = d_hat
            drift = f + g[:, None] * u_nn - u0[None, :]
            e2_norm = float(np.linalg.norm(errs.e2))
            rec["ch"][r] = float(errs.e2 @ drift.reshape(-1)) - mon.bound(e2_norm)
            rec["g_min"][r] = g.min()
            written += 1
        if k == n_steps:
            break
        try:
            z = stepper(rhs, z, t, sim.dt)
        except DivergenceError:
            status = "diverged"
            break
        xpart = z[:2 * nn]
        if not np.all(np.isfinite(z)) or np.linalg.norm(xpart) > sim.blowup_norm:
            status = "diverged"
            break

    for key in rec:
        rec[key] = rec[key][:written]

    g_lower = float(rec["g_min"].min()) if written else float("nan")
    v1, v2, d1_const = lyapunov_series(
        dm.h_inv, gains, rec["e1"], rec["e2"], rec["d_hat"], mon.kappa, g_lower, n
    )
    meta = {
        "policy": policy.kind.value,
        "dt": sim.dt,
        "duration": sim.duration,
        "record_stride": stride,
        "integrator": sim.integrator,
        "t0": t0,
        "seed": sim.seed,
        "sigma_min_h": dm.sigma_min_h,
        "g_lower": g_lower,
        "d1_const": d1_const,
        "kappa": mon.kappa,
        "variant": mon.variant,
        "offset_residual": inst.offset_residual,
        "n_agents": N,
        "state_dim": n,
    }
    return SimRecord(
        time=rec["time"], x=rec["x"],
        x0_pos=rec["x0_pos"], x0_vel=rec["x0_vel"], x0_acc=rec["x0_acc"],
        u=rec["u"], u_nn=rec["u_nn"],
        e1=rec["e1"], e1_dot=rec["e1_dot"], e2=rec["e2"], delta1=rec["delta1"],
        d_hat=rec["d_hat"], ch=rec["ch"], g_min=rec["g_min"],
        v1=v1, v2=v2, status=status, meta=meta,
    )


def lyapunov_series(
    h_inv: np.ndarray,
    gains: GainSet,
    e1: np.ndarray,
    e2: np.ndarray,
    d_hat: np.ndarray,
    kappa: float,
    g_lower: float,
    n: int,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Candidate-function series V1, V2 and the adaptation target d1.

    V1 = (e1' K1^2 H^-1 e1 + e2' H^-1 e2) / (2 g_lower);
    d1 = (|H^-1 K1| + kappa) / g_lower;
    V2 = V1 + (d_hat - d1)' M1^-1 (d_hat - d1) / 2.

    g_lower is the empirical minimum of the control-direction eigenvalues
    over the run, so these are diagnostics rather than certified bounds.
    """
    if len(e1) == 0:
        return np.empty(0), np.empty(0), float("nan")
    if g_lower <= 0 or not np.isfinite(g_lower):
        raise AssumptionError(f"g_lower must be positive, got {g_lower}")
    k1c = gains.k1_coord(n)
    m1 = (k1c * k1c)[:, None] * h_inv  # K1^2 H^-1
    q1 = np.einsum("si,ij,sj->s", e1, m1, e1)
    q2 = np.einsum("si,ij,sj->s", e2, h_inv, e2)
    v1 = (q1 + q2) / (2.0 * g_lower)
    d1_const = (np.linalg.norm(h_inv * k1c[None, :], 2) + kappa) / g_lower
    dtil = d_hat - d1_const
    v2 = v1 + 0.5 * (dtil * dtil / gains.mu1[None, :]).sum(axis=1)
    return v1, v2, float(d1_const)


def lyapunov_diagnostics(record: SimRecord, post_transient_frac: float = 0.25):
    """Estimate V2_dot by centered differences and report monotonicity.

    Samples in the first `post_transient_frac` of the horizon are excluded
    (the function may climb while the adaptation variables sweep up).
    Returns a dict with the nonincreasing fraction and the offending times.
    """
    t, v2 = record.time, record.v2
    if len(t) < 3:
        return {"post_transient_fraction_nonincreasing": float("nan"), "violations": []}
    vdot = np.empty_like(v2)
    vdot[1:-1] = (v2[2:] - v2[:-2]) / (t[2:] - t[:-2])
    vdot[0] = (v2[1] - v2[0]) / (t[1] - t[0])
    vdot[-1] = (v2[-1] - v2[-2]) / (t[-1] - t[-2])
    start = int(np.ceil(post_transient_frac * len(t)))
    scale = max(1.0, float(np.abs(v2).max()))
    tol = 1e-9 * scale
    post = vdot[start:]
    ok = post <= tol
    bad_times = t[start:][~ok]
    return {
        "post_transient_start": float(t[start]) if start < len(t) else None,
        "post_transient_fraction_nonincreasing": float(ok.mean()) if len(ok) else float("nan"),
        "violations": bad_times.tolist()[:50],
        "violation_count": int((~ok).sum()),
        "v2_initial": float(v2[0]),
        "v2_final": float(v2[-1]),
    }


def ch_monitor(e2: np.ndarray, drift: np.ndarray, mon: MonitorConfig) -> float:
    """Growth-condition residual e2'(f + g u_nn - leader accel) - bound."""
    e2 = np.asarray(e2, dtype=float).reshape(-1)
    drift = np.asarray(drift, dtype=float).reshape(-1)
    return float(e2 @ drift) - mon.bound(float(np.linalg.norm(e2)))
