"""Kinematic model of the simplified four-finger floating hand.

The hand has a free-floating 6-DoF base plus four fingers with four revolute
joints each (abduction about the finger's local z, then three flexions about
local -y, so positive flexion curls toward local +z).  Forward kinematics is
closed-form; the flexion chain of each finger is planar.

The palm frame coincides with the base transform: facing is the palm z-axis,
pointing is the palm x-axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np
import yaml

from .geometry import Frame3, RigidTransform

FINGER_NAMES = ("thumb", "index", "middle", "ring")
JOINTS_PER_FINGER = 4
NUM_FINGER_JOINTS = 16


def _rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]], dtype=float)
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]], dtype=float)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]], dtype=float)
    return Rz @ Ry @ Rx


@dataclass(frozen=True)
class FingerChain:
    name: str
    base_origin: np.ndarray      # palm-relative, meters
    base_axes: np.ndarray        # palm-relative rotation, columns = axes
    link_lengths: np.ndarray     # 4 links, meters

    def __post_init__(self):
        if len(self.link_lengths) != JOINTS_PER_FINGER:
            raise ValueError("each finger needs exactly 4 link lengths")
        if np.any(np.asarray(self.link_lengths) <= 0.0):
            raise ValueError("link lengths must be positive")


@dataclass(frozen=True)
class HandDescription:
    """Immutable hand geometry: finger chains, joint limits, tip radius."""

    fingers: tuple[FingerChain, ...]
    joint_limits: np.ndarray     # (16, 2) lo/hi radians
    fingertip_radius: float
    scale_ratio: float

    def __post_init__(self):
        if len(self.fingers) != 4:
            raise ValueError("hand model has exactly 4 fingers")
        if self.fingertip_radius <= 0.0 or self.scale_ratio <= 0.0:
            raise ValueError("fingertip_radius and scale_ratio must be positive")
        # flat per-finger tuples for the scalar FK fast path
        flat = []
        for f in self.fingers:
            R = np.asarray(f.base_axes, dtype=float)
            flat.append((
                tuple(float(v) for v in np.asarray(f.base_origin)),
                tuple(tuple(float(v) for v in row) for row in R),
                tuple(float(v) for v in np.asarray(f.link_lengths)),
            ))
        object.__setattr__(self, "_flat", tuple(flat))

    def clamp_joints(self, angles: np.ndarray) -> np.ndarray:
        return np.clip(angles, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def max_reach(self) -> float:
        """Farthest any fingertip can be from the palm origin."""
        best = 0.0
        for f in self.fingers:
            r = float(np.linalg.norm(f.base_origin)) + float(np.sum(f.link_lengths))
            best = max(best, r)
        return best


@dataclass(frozen=True)
class HandPose:
    """22-DoF configuration: floating base plus 16 finger joint angles."""

    base: RigidTransform
    fingers: np.ndarray

    def __post_init__(self):
        f = np.array(self.fingers, dtype=float)
        if f.shape != (NUM_FINGER_JOINTS,):
            raise ValueError("fingers must be a 16-vector of joint angles")
        f.flags.writeable = False
        object.__setattr__(self, "fingers", f)


@dataclass(frozen=True)
class FKResult:
    palm_frame: Frame3
    fingertips: np.ndarray      # (4, 3) world, thumb/index/middle/ring order
    facing: np.ndarray          # palm z-axis, unit
    pointing: np.ndarray        # palm x-axis, unit
    clamped: bool               # True if any joint was outside its limits


def load_description(path) -> HandDescription:
    """Load a hand description from a YAML file."""
    with open(path, "r") as fh:
        doc = yaml.safe_load(fh)
    return _description_from_dict(doc)


def default_description() -> HandDescription:
    """The canonical hand shipped with the package."""
    text = resources.files("isagrasp").joinpath("data/default_hand.yaml").read_text()
    return _description_from_dict(yaml.safe_load(text))


def _description_from_dict(doc: dict) -> HandDescription:
    abd_lo, abd_hi = (float(v) for v in doc["abduction_limits"])
    flex_lo, flex_hi = (float(v) for v in doc["flexion_limits"])
    fingers = []
    for spec in doc["fingers"]:
        rpy = [float(v) for v in spec["base_rpy"]]
        fingers.append(FingerChain(
            name=str(spec["name"]),
            base_origin=np.array(spec["base_origin"], dtype=float),
            base_axes=_rpy_matrix(*rpy),
            link_lengths=np.array(spec["link_lengths"], dtype=float),
        ))
    limits = np.array([[abd_lo, abd_hi], [flex_lo, flex_hi],
                       [flex_lo, flex_hi], [flex_lo, flex_hi]] * 4)
    return HandDescription(
        fingers=tuple(fingers),
        joint_limits=limits,
        fingertip_radius=float(doc["fingertip_radius"]),
        scale_ratio=float(doc["scale_ratio"]),
    )


def _fingertips_raw(desc: HandDescription, R, t, angles: Sequence[float]):
    """Scalar-math fingertip FK used by hot loops.

    R is a 3x3 rotation as nested sequences, t a 3-sequence, angles the 16
    joint values (assumed finite, already clamped).  Returns a list of four
    (x, y, z) tuples in world coordinates.
    """
    tips = []
    flat = desc._flat
    for i in range(4):
        origin, B, links = flat[i]
        a = angles[4 * i]
        f1 = angles[4 * i + 1]
        f2 = f1 + angles[4 * i + 2]
        f3 = f2 + angles[4 * i + 3]
        # planar chain in the abducted x-z plane
        px = links[0] + links[1] * math.cos(f1) + links[2] * math.cos(f2) + links[3] * math.cos(f3)
        pz = links[1] * math.sin(f1) + links[2] * math.sin(f2) + links[3] * math.sin(f3)
        ca, sa = math.cos(a), math.sin(a)
        lx, ly, lz = px * ca, px * sa, pz
        # finger frame -> palm frame
        hx = B[0][0] * lx + B[0][1] * ly + B[0][2] * lz + origin[0]
        hy = B[1][0] * lx + B[1][1] * ly + B[1][2] * lz + origin[1]
        hz = B[2][0] * lx + B[2][1] * ly + B[2][2] * lz + origin[2]
        # palm frame -> world
        tips.append((
            R[0][0] * hx + R[0][1] * hy + R[0][2] * hz + t[0],
            R[1][0] * hx + R[1][1] * hy + R[1][2] * hz + t[1],
            R[2][0] * hx + R[2][1] * hy + R[2][2] * hz + t[2],
        ))
    return tips


def forward_kinematics(desc: HandDescription, pose: HandPose) -> FKResult:
    """World-frame fingertips, palm frame, and hand direction vectors.

    Joints outside their limits are clamped and flagged in the result; NaN
    joint values are an error.
    """
    angles = np.asarray(pose.fingers, dtype=float)
    if not np.all(np.isfinite(angles)):
        raise ValueError("joint angles contain non-finite values")
    clamped_angles = desc.clamp_joints(angles)
    was_clamped = bool(np.any(clamped_angles != angles))

    R = pose.base.rotation.to_matrix()
    t = pose.base.translation
    tips = _fingertips_raw(desc, R, t, clamped_angles.tolist())
    return FKResult(
        palm_frame=Frame3(t, R),
        fingertips=np.array(tips),
        facing=R[:, 2].copy(),
        pointing=R[:, 0].copy(),
        clamped=was_clamped,
    )
