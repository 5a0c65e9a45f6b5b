"""Reference grasp generators and the dense RL reward formula.

Random and heuristic grasp generators serve as comparison rows in the
evaluation report; `ppo_reward` is the shaped reward used by the RL
comparison (reward formula only, no training loop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, UnitQuaternion
from .shapes import ShapeInstance
from .transfer import Grasp

NUM_ROBOT_FINGERS = 4

# canonical top-down palm orientation: roll by pi so the palm faces -z while
# the pointing direction stays +x
TOP_DOWN = UnitQuaternion.from_axis_angle([math.pi, 0.0, 0.0])


@dataclass(frozen=True)
class BaselineConfig:
    translation_range: float = 0.1    # meters, uniform cube around the center
    rotation_range: float = 0.5       # radians, axis-angle components
    finger_low: float = 0.5           # radians
    finger_high: float = 1.0
    top_offset: float = 0.05          # meters above the object top surface

    def __post_init__(self):
        if self.top_offset <= 0.0:
            raise ValueError("top_offset must be positive")


def random_grasp(inst: ShapeInstance, cfg: BaselineConfig, seed: int) -> Grasp:
    """Uniformly random 22-DoF grasp around the object center."""
    rng = np.random.default_rng(seed)
    t = inst.center() + rng.uniform(-cfg.translation_range, cfg.translation_range, size=3)
    axis_angle = rng.uniform(-cfg.rotation_range, cfg.rotation_range, size=3)
    rotation = UnitQuaternion.from_axis_angle(axis_angle).compose(TOP_DOWN)
    fingers = rng.uniform(cfg.finger_low, cfg.finger_high, size=16)
    return Grasp(RigidTransform(t, rotation), fingers)


def heuristic_grasp(inst: ShapeInstance, cfg: BaselineConfig = BaselineConfig()) -> Grasp:
    """Top-down grasp at a fixed offset above the object's highest point."""
    center = inst.center()
    z_max = inst.z_extent()[1]
    t = np.array([center[0], center[1], z_max + cfg.top_offset])
    fingers = np.full(16, 0.8)
    fingers[0::4] = 0.0  # abduction stays neutral
    return Grasp(RigidTransform(t, TOP_DOWN), fingers)


def ppo_reward(fingertips, object_center, n_contacts: int) -> float:
    """Dense distance reward plus contact fraction:
    exp(-sum_i |f_i - o|) + N_c / N_r."""
    tips = np.asarray(fingertips, dtype=float).reshape(4, 3)
    center = np.asarray(object_center, dtype=float)
    total = float(np.sum(np.linalg.norm(tips - center, axis=1)))
    return math.exp(-total) + n_contacts / NUM_ROBOT_FINGERS
