"""Decentralized swarm LiDAR-inertial state estimation with a deterministic simulator."""
from .geometry import Pose, exp_so3, log_so3
from .state import NavState, append_extrinsic, boxminus, boxplus, partition, reinitialize
from .esikf import ImuSample, MeasurementBundle, NoiseParams, iterated_update, predict
from .harness import MetricsReport, Scenario, ScenarioError, load_scenario, run, sweep

__all__ = [
    "Pose", "exp_so3", "log_so3",
    "NavState", "append_extrinsic", "boxminus", "boxplus", "partition", "reinitialize",
    "ImuSample", "MeasurementBundle", "NoiseParams", "iterated_update", "predict",
    "MetricsReport", "Scenario", "ScenarioError", "load_scenario", "run", "sweep",
]

__version__ = "0.1.0"
