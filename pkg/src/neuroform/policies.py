"""Online control policies.

The distributed policies (adaptive, no-NN, non-adaptive) see only local
quantities: each agent's augmented error, its masked network input, its
gains, and its own adaptation variable. The oracle policy is the
white-box data-generating controller and is the only one allowed to
touch the true dynamics; it exists to produce training trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import FormationInstance
from .errors import GainSet
from .exceptions import AssumptionError, ConfigError
from .mlp import MlpEnsemble


class PolicyKind(str, Enum):
    ADAPTIVE = "adaptive"
    NO_NN = "no_nn"
    NON_ADAPTIVE = "non_adaptive"
    ORACLE = "oracle"


@dataclass(frozen=True)
class LocalObservationBatch:
    """Everything the distributed controllers may read, one row per agent.

    Deliberately excludes the true dynamics and non-neighbor states; the
    masked nn_inputs rows are assembled with the same layout as training.
    """

    e2: np.ndarray         # (N, n) augmented errors
    nn_inputs: np.ndarray  # (N, input_width) masked inputs
    d_hat: np.ndarray      # (N,) adaptation variables


def adaptive_control(e_i2: np.ndarray, u_nn_i: np.ndarray, k2: float, d_hat: float) -> np.ndarray:
    """u_i = u_nn_i - (k2 + d_hat) e_i2."""
    if d_hat <= 0:
        raise ConfigError(f"adaptation variable must stay positive, got {d_hat}")
    return u_nn_i - (k2 + d_hat) * e_i2


def adaptation_rhs(e_i2: np.ndarray, mu_i1: float) -> float:
    """d_hat rate mu * |e_i2|^2 (always nonnegative)."""
    if mu_i1 <= 0:
        raise ConfigError(f"adaptation gain must be positive, got {mu_i1}")
    return float(mu_i1 * np.dot(e_i2, e_i2))


def oracle_control(
    i: int, inst: FormationInstance, x: np.ndarray, t: float, e_i2: np.ndarray
) -> np.ndarray:
    """White-box controller g_i^-1 (u_0 - e_i2 - f_i) for agent i."""
    n = inst.state_dim
    f = inst.f_stacked(x, t)[i - 1]
    g = inst.g_scalars(x, t)[i - 1]
    if g <= 0:
        raise AssumptionError("oracle controller needs an invertible control direction")
    _, _, u0 = inst.leader.state(t)
    return (u0 - e_i2 - f) / g


def baseline_control(
    kind: PolicyKind,
    e_i2: np.ndarray,
    u_nn_i: np.ndarray,
    k2: float,
    d_hat: float,
) -> np.ndarray:
    """The two ablations: drop the network term, or freeze the adaptation."""
    if kind == PolicyKind.NO_NN:
        return -(k2 + d_hat) * e_i2
    if kind == PolicyKind.NON_ADAPTIVE:
        return u_nn_i - k2 * e_i2
    raise ConfigError(f"{kind} is not a baseline")


class Policy:
    """Shared policy interface used by the simulation engine."""

    kind: PolicyKind
    white_box = False

    @property
    def uses_nn(self) -> bool:
        return False

    @property
    def adapts(self) -> bool:
        """Whether the adaptation variables evolve under this policy."""
        return False


class DistributedPolicy(Policy):
    """adaptive / no_nn / non_adaptive, computed from local observations only."""

    def __init__(self, kind: PolicyKind, gains: GainSet, ensemble: MlpEnsemble = None):
        if kind == PolicyKind.ORACLE:
            raise ConfigError("the oracle is not a distributed policy")
        kind = PolicyKind(kind)
        if kind in (PolicyKind.ADAPTIVE, PolicyKind.NON_ADAPTIVE) and ensemble is None:
            raise ConfigError(f"policy {kind.value} needs trained network weights")
        self.kind = kind
        self.gains = gains
        self.ensemble = ensemble

    @property
    def uses_nn(self) -> bool:
        return self.kind in (PolicyKind.ADAPTIVE, PolicyKind.NON_ADAPTIVE)

    @property
    def adapts(self) -> bool:
        return self.kind in (PolicyKind.ADAPTIVE, PolicyKind.NO_NN)

    def controls(self, obs: LocalObservationBatch) -> tuple[np.ndarray, np.ndarray]:
        """(u, u_nn) as (N, n) arrays; u_nn is zero for the no-NN policy."""
        if self.uses_nn:
            u_nn = self.ensemble.infer(obs.nn_inputs)
        else:
            u_nn = np.zeros_like(obs.e2)
        k2 = self.gains.k2[:, None]
        if self.kind == PolicyKind.ADAPTIVE:
            u = u_nn - (k2 + obs.d_hat[:, None]) * obs.e2
        elif self.kind == PolicyKind.NO_NN:
            u = -(k2 + obs.d_hat[:, None]) * obs.e2
        else:  # NON_ADAPTIVE: adaptation frozen at its initial value
            u = u_nn - k2 * obs.e2
        return u, u_nn


class OraclePolicy(Policy):
    """Data-generating controller with white-box access to the dynamics."""

    kind = PolicyKind.ORACLE
    white_box = True

    def controls_whitebox(
        self,
        inst: FormationInstance,
        x: np.ndarray,
        t: float,
        e2: np.ndarray,
        f: np.ndarray,
        g: np.ndarray,
        u0: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized g^-1 (u0 - e2 - f); the engine passes f, g it already has."""
        if np.any(g <= 0):
            raise AssumptionError("oracle controller needs an invertible control direction")
        u = (u0[None, :] - e2 - f) / g[:, None]
        return u, np.zeros_like(u)
