"""Grasp transfer across deformed instances via dense correspondences.

A grasp verified on a source instance is carried to a target instance of the
same template by anchoring the hand's root translation in local frames built
at the N surface samples nearest to it, then re-evaluating those frames at
the corresponding (same-index) samples of the target and averaging.  The
grasp orientation and finger configuration are copied unchanged; downstream
refinement absorbs the residual error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, UnitQuaternion, build_surface_frame
from .shapes import ShapeInstance

_Z_HINT = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Grasp:
    """Pregrasp palm pose plus the final 16-joint finger configuration."""

    pregrasp: RigidTransform
    fingers: np.ndarray

    def __post_init__(self):
        f = np.array(self.fingers, dtype=float)
        if f.shape != (16,) or not np.all(np.isfinite(f)):
            raise ValueError("fingers must be a finite 16-vector")
        f.flags.writeable = False
        object.__setattr__(self, "fingers", f)

    def replace_translation(self, t) -> "Grasp":
        return Grasp(RigidTransform(np.asarray(t, dtype=float), self.pregrasp.rotation),
                     self.fingers)


@dataclass(frozen=True)
class TransferContext:
    """Reference-sample indices and the root offsets expressed in their frames."""

    reference_indices: np.ndarray   # (N,) indices into the source instance samples
    local_offsets: np.ndarray       # (N, 3) root translation in each local frame

    def __post_init__(self):
        idx = np.array(self.reference_indices, dtype=int)
        off = np.array(self.local_offsets, dtype=float)
        if idx.ndim != 1 or off.shape != (idx.shape[0], 3):
            raise ValueError("indices and offsets must be (N,) and (N, 3)")
        idx.flags.writeable = False
        off.flags.writeable = False
        object.__setattr__(self, "reference_indices", idx)
        object.__setattr__(self, "local_offsets", off)

    @property
    def n(self) -> int:
        return int(self.reference_indices.shape[0])


def build_context(source: ShapeInstance, grasp: Grasp, n: int = 20) -> TransferContext:
    """Anchor the grasp root in frames at the n nearest surface samples.

    Local frames use the sample normal as z with a global +z tangent hint;
    offsets are the root translation expressed in each frame.
    """
    if n < 1 or n > source.num_samples:
        raise ValueError(f"n must be in [1, {source.num_samples}]")
    root = grasp.pregrasp.translation
    _, idx = source._tree.query(root, k=n)
    idx = np.atleast_1d(idx)
    offsets = np.empty((n, 3))
    for j, i in enumerate(idx):
        frame = build_surface_frame(source.points[i], source.normals[i], _Z_HINT)
        offsets[j] = frame.to_local(root)
    return TransferContext(reference_indices=idx, local_offsets=offsets)


def transfer_grasp(ctx: TransferContext, source: ShapeInstance,
                   target: ShapeInstance, grasp: Grasp) -> Grasp:
    """Carry a source grasp to the corresponding samples of the target.

    The new root translation is the average of the local offsets re-expressed
    in the target's frames; orientation and fingers are copied unchanged.
    """
    if source.template != target.template:
        raise ValueError("source and target must share a template for correspondences")
    if np.any(ctx.reference_indices >= target.num_samples):
        raise IndexError("reference index out of range for the target instance")
    acc = np.zeros(3)
    for j, i in enumerate(ctx.reference_indices):
        frame = build_surface_frame(target.points[i], target.normals[i], _Z_HINT)
        acc += frame.to_world(ctx.local_offsets[j])
    t_new = acc / ctx.n
    return Grasp(RigidTransform(t_new, grasp.pregrasp.rotation), grasp.fingers)
