"""Learning-based distributed formation control of leader-follower groups.

Offline: per-agent perceptron controllers are trained on trajectories of
the white-box data-generating controller. Online: a distributed adaptive
feedback policy combines the network output with an adaptive error term
and is monitored against the growth condition it relies on.
"""

from .datasets import AgentDataset, TrainingSample, TrajectoryData, build_agent_dataset
from .dynamics import (
    AgentDynamicsParams,
    CircleProfile,
    FormationInstance,
    FormationOffsets,
    LeaderProfile,
    LinearProfile,
    WaypointProfile,
)
from .engine import MonitorConfig, SimConfig, SimRecord, run
from .errors import ErrorState, GainSet, OffsetVector
from .mlp import AdamState, MlpController, MlpEnsemble, load_weights, save_weights, train
from .policies import DistributedPolicy, OraclePolicy, Policy, PolicyKind
from .topology import DerivedMatrices, Topology, derive, neighbor_blocks, validate

__version__ = "0.1.0"

__all__ = [
    "AgentDataset", "AgentDynamicsParams", "AdamState", "CircleProfile",
    "DerivedMatrices", "DistributedPolicy", "ErrorState", "FormationInstance",
    "FormationOffsets", "GainSet", "LeaderProfile", "LinearProfile",
    "MlpController", "MlpEnsemble", "MonitorConfig", "OffsetVector",
    "OraclePolicy", "Policy", "PolicyKind", "SimConfig", "SimRecord",
    "Topology", "TrainingSample", "TrajectoryData", "WaypointProfile",
    "build_agent_dataset", "derive", "load_weights", "neighbor_blocks",
    "run", "save_weights", "train", "validate",
]
