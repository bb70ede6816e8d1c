"""Shared trajectory state types: proprioception frames and observed states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .cloud import LabeledCloud
from .se3 import Pose


@dataclass(frozen=True)
class ProprioFrame:
    """One robot-side sample: timestep, gripper command, joint speeds, EE pose."""

    timestep: int
    gripper_open: bool
    joint_velocities: NDArray[np.float64]
    ee_pose: Pose

    def __post_init__(self) -> None:
        vel = np.asarray(self.joint_velocities, dtype=np.float64)
        if vel.shape != (7,):
            raise ValueError(f"joint_velocities must have 7 entries, got {vel.shape}")
        vel.flags.writeable = False
        object.__setattr__(self, "joint_velocities", vel)

    @property
    def max_joint_speed(self) -> float:
        return float(np.abs(self.joint_velocities).max())


@dataclass(frozen=True)
class TrajectoryState:
    """One observed demonstration or execution state."""

    cloud: LabeledCloud
    proprio: ProprioFrame
    attached_instance: Optional[int] = None
