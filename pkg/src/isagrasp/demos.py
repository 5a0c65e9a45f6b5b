"""Procedural synthetic demonstrations on template shapes.

Stands in for mocap data: four "human" fingertip keypoints are placed on the
template surface according to a named grasp style, lightly jittered, and
paired with a palm frame hovering above the grasp region.  Keypoint order is
thumb, index, middle, ring.

Styles (direction angles are polar from +z / azimuth in the x-y plane):
  pinch-top   two opposed primaries high on the shape plus two supports
  wrap-side   four contacts around the upper lateral band, thumb opposing
  tripod      three spread contacts high on the shape plus one support
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Frame3, RigidTransform
from .retarget import DemoRecord
from .shapes import TemplateShape, template_sdf, template_sdf_gradient

STYLES = ("pinch-top", "wrap-side", "tripod")

PALM_OFFSET = 0.07   # meters from keypoint centroid along the approach axis

# per style: (polar, azimuth) in radians for thumb, index, middle, ring;
# the non-thumb cluster stays within the hand's lateral finger spread
_PLACEMENTS = {
    "pinch-top": ((1.05, math.pi), (1.05, 0.0), (1.15, 0.7), (1.15, -0.7)),
    "wrap-side": ((1.40, math.pi), (1.40, -0.6), (1.40, 0.0), (1.40, 0.6)),
    "tripod": ((0.96, math.pi), (0.96, -math.pi / 3), (0.96, math.pi / 3), (1.40, 0.0)),
}


@dataclass(frozen=True)
class DemoSpec:
    template: TemplateShape
    style: str = "pinch-top"
    jitter: float = 0.0   # meters, keypoint noise sigma

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown grasp style {self.style!r}")
        if self.jitter < 0.0:
            raise ValueError("jitter must be nonnegative")


class InfeasibleStyle(ValueError):
    """The template geometry cannot support the requested grasp style."""


def _surface_point(template: TemplateShape, direction: np.ndarray) -> np.ndarray:
    """Ray-cast from the center along `direction` to the zero level set."""
    d = direction / np.linalg.norm(direction)
    t_hi = 1.5 * float(np.linalg.norm(template.half_extents()))
    if template_sdf(template, t_hi * d) <= 0.0:
        raise InfeasibleStyle("template surface not found along placement ray")
    lo, hi = 0.0, t_hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if template_sdf(template, mid * d) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * d


def synth_demo(spec: DemoSpec, seed: int) -> DemoRecord:
    """Build one synthetic demonstration record, deterministic per seed.

    Keypoint jitter is isotropic Gaussian with the normal component clamped
    to +-1.5 sigma, so jittered keypoints always stay within 1.5 sigma of the
    surface while per-coordinate displacements keep Gaussian tails.
    """
    rng = np.random.default_rng(seed)
    template = spec.template
    placements = _PLACEMENTS[spec.style]

    keypoints = []
    normals = []
    for polar, azimuth in placements:
        d = np.array([
            math.sin(polar) * math.cos(azimuth),
            math.sin(polar) * math.sin(azimuth),
            math.cos(polar),
        ])
        p = _surface_point(template, d)
        n = template_sdf_gradient(template, p)[0]
        n /= np.linalg.norm(n)
        keypoints.append(p)
        normals.append(n)
    keypoints = np.array(keypoints)
    normals = np.array(normals)

    _check_feasible(spec, keypoints)

    if spec.jitter > 0.0:
        noise = rng.normal(0.0, spec.jitter, size=(4, 3))
        along = np.sum(noise * normals, axis=1)
        clamped = np.clip(along, -1.5 * spec.jitter, 1.5 * spec.jitter)
        noise += (clamped - along)[:, None] * normals
        keypoints = keypoints + noise
        # tangential noise drifts off curved surfaces quadratically; pull any
        # stray keypoint back onto the 1.5 sigma shell
        for _ in range(3):
            sd = template_sdf(template, keypoints)
            over = np.abs(sd) > 1.5 * spec.jitter
            if not np.any(over):
                break
            g = template_sdf_gradient(template, keypoints[over])
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            excess = sd[over] - np.sign(sd[over]) * 1.5 * spec.jitter
            keypoints[over] -= excess[:, None] * g

    centroid = keypoints.mean(axis=0)
    approach = np.array([0.0, 0.0, 1.0])   # tabletop demos come from above
    origin = centroid + PALM_OFFSET * approach
    pointing = -approach
    opposition = keypoints[0] - keypoints[1:].mean(axis=0)
    z_axis = opposition - (opposition @ pointing) * pointing
    nz = np.linalg.norm(z_axis)
    if nz < 1e-8:
        raise InfeasibleStyle("opposition axis is parallel to the approach axis")
    z_axis /= nz
    y_axis = np.cross(z_axis, pointing)
    palm = Frame3(origin, np.column_stack([pointing, y_axis, z_axis]))

    return DemoRecord(
        human_fingertips=keypoints,
        human_palm=palm,
        object_pose=RigidTransform.identity(),
        object_center=np.zeros(3),
    )


def _check_feasible(spec: DemoSpec, keypoints: np.ndarray) -> None:
    thumb = keypoints[0]
    others = keypoints[1:]
    spread = float(np.linalg.norm(thumb - others.mean(axis=0)))
    if spread < 0.02:
        raise InfeasibleStyle(
            f"{spec.style} needs at least 2 cm of thumb-finger opposition, "
            f"got {spread * 100:.1f} cm on this template")
    if spec.style == "wrap-side":
        lateral = np.linalg.norm(keypoints[:, :2], axis=1)
        if float(lateral.min()) < 0.012:
            raise InfeasibleStyle(
                "wrap-side needs a lateral band wider than a fingertip, "
                f"got {lateral.min() * 100:.1f} cm on this template")
