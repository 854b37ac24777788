"""Digital-twin toolkit for a cable-driven spiral soft continuum arm.

Pseudo-rigid-body dynamics with tendon actuation, staged identification of
stiffness/damping/control parameters from trajectory data, gravity-aware
reachability maps, a learned inverse-kinematics model, and a
preview-confirm teleoperation server.
"""

__version__ = "0.1.0"

from spiralarm.arm import (
    ArmGeometry,
    ArmParameters,
    ArmModel,
    build_arm,
    damping_from_ratio,
    init_kv,
    scaled_stiffness,
)
from spiralarm.dynamics import (
    ArmState,
    SimConfig,
    Simulation,
    TendonCommand,
    initial_state,
    run_protocol,
    settle,
    step,
)
from spiralarm.kernels import BACKEND
from spiralarm.losses import LossConfig, dynamic_loss, huber, internal_error, static_loss
from spiralarm.trajectory import Trajectory, align, butterworth_lowpass, load_csv, save_csv

__all__ = [
    "ArmGeometry", "ArmParameters", "ArmModel", "build_arm",
    "damping_from_ratio", "init_kv", "scaled_stiffness",
    "ArmState", "SimConfig", "Simulation", "TendonCommand",
    "initial_state", "run_protocol", "settle", "step",
    "BACKEND",
    "LossConfig", "dynamic_loss", "huber", "internal_error", "static_loss",
    "Trajectory", "align", "butterworth_lowpass", "load_csv", "save_csv",
    "__version__",
]
