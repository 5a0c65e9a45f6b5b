"""Quasi-static grasp success oracle.

Replaces dynamic simulation with wrench-space analysis: fingers close onto
the object by linear joint interpolation, fingertip-sphere contacts are
extracted against the instance SDF, and the grasp succeeds if the contact
friction pyramids (a) achieve force closure within the wrench subspace they
span, and (b) can balance gravity plus a set of random palm-disturbance
wrenches under a per-contact normal-force budget.

Conventions:
  - contact normals point INTO the object (direction of pushing force);
  - wrenches are [force; torque/rho] about the object center, with rho the
    object bounding radius, so force and torque components are commensurate;
  - friction cones are inner-approximated by m-sided pyramids with a
    deterministic tangent basis (global-z hint);
  - contacts are soft: the fingertip sphere presses a small patch onto the
    surface, adding a torsional friction budget |tau_spin| <= mu * a * N
    with patch radius a.  Without it, every two-finger pinch is exactly
    degenerate about the contact line and no pinch could ever balance a
    center of mass that is off that line by any amount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .geometry import build_surface_frame
from .hand import HandDescription, _fingertips_raw
from .shapes import ShapeInstance, instance_sdf
from .transfer import Grasp

DEFAULT_F_MAX = 5.0        # newtons of normal force per contact
DEFAULT_K_PALM = 200.0     # N/m, maps palm positional noise to inertial force
DEFAULT_M_SIDES = 8
# soft-finger patch radius: 2/3 of the default fingertip radius, the standard
# uniform-pressure circular-patch approximation
DEFAULT_TORSION_RADIUS = 0.008
CLOSE_STEPS = 10
GRAVITY = 9.81


class PregraspCollision(Exception):
    """Raised when the palm origin starts inside the object."""


@dataclass(frozen=True)
class PhysicsParams:
    mass: float                 # kg
    friction: float             # Coulomb mu
    gravity: float = GRAVITY    # m/s^2, acting along -z

    def __post_init__(self):
        if self.mass <= 0.0 or self.friction < 0.0:
            raise ValueError("mass must be positive and friction nonnegative")


@dataclass(frozen=True)
class OracleParams:
    """Tunable constants of the quasi-static success oracle."""

    f_max: float = DEFAULT_F_MAX
    k_palm: float = DEFAULT_K_PALM
    m_sides: int = DEFAULT_M_SIDES
    perturb_sigma: float = 0.01
    torsion_radius: float = DEFAULT_TORSION_RADIUS
    disturb_draws: int = 10


@dataclass(frozen=True)
class Contact:
    point: np.ndarray     # world, meters
    normal: np.ndarray    # unit, into the object
    finger_id: int

    def __post_init__(self):
        p = np.array(self.point, dtype=float)
        n = np.array(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("contact normal must be unit length")
        p.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class StabilityVerdict:
    success: bool
    contacts: tuple
    epsilon_quality: float
    failed_draw: Optional[int] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class CloseResult:
    contacts: tuple
    final_angles: np.ndarray


def close_fingers(desc: HandDescription, inst: ShapeInstance, grasp: Grasp,
                  steps: int = CLOSE_STEPS) -> CloseResult:
    """Close each finger linearly from open to its target configuration.

    A finger freezes at the last non-penetrating step once its fingertip
    sphere touches the instance (SDF below the tip radius); the contact is
    the surface point nearest the penetrating tip, with the inward normal.
    Raises PregraspCollision if the palm origin itself starts inside.
    """
    root = grasp.pregrasp.translation
    d_root, _ = instance_sdf(inst, root)
    if d_root < 0.0:
        raise PregraspCollision("palm origin starts inside the object")

    R = grasp.pregrasp.rotation.to_matrix()
    target = desc.clamp_joints(np.asarray(grasp.fingers, dtype=float))
    frozen = [False] * 4
    angles = np.zeros(16)
    contacts = []
    r_tip = desc.fingertip_radius

    for k in range(1, steps + 1):
        trial = angles.copy()
        scale = k / steps
        for i in range(4):
            if not frozen[i]:
                trial[4 * i:4 * i + 4] = scale * target[4 * i:4 * i + 4]
        tips = np.array(_fingertips_raw(desc, R, root, trial.tolist()))
        dist, normal = instance_sdf(inst, tips)
        for i in range(4):
            if frozen[i]:
                continue
            if dist[i] < r_tip:
                # tip touched: record contact at the projected surface point
                nearest_idx = inst._tree.query(tips[i])[1]
                contacts.append(Contact(
                    point=inst.points[nearest_idx],
                    normal=-inst.normals[nearest_idx],
                    finger_id=i,
                ))
                frozen[i] = True  # keep previous (non-penetrating) angles
            else:
                angles[4 * i:4 * i + 4] = trial[4 * i:4 * i + 4]
    return CloseResult(contacts=tuple(contacts), final_angles=angles)


def _tangent_basis(normal: np.ndarray):
    frame = build_surface_frame(np.zeros(3), normal, np.array([0.0, 0.0, 1.0]))
    return frame.axes[:, 0], frame.axes[:, 1]


def edges_per_contact(m_sides: int = DEFAULT_M_SIDES) -> int:
    return m_sides + 2


def contact_wrenches(contacts: Sequence[Contact], friction: float,
                     m_sides: int = DEFAULT_M_SIDES,
                     center=None, char_radius: Optional[float] = None,
                     torsion_radius: float = DEFAULT_TORSION_RADIUS) -> np.ndarray:
    """Edge wrenches of each contact, one row per edge, unit normal force.

    Per contact: m_sides friction-pyramid edges plus two soft-finger
    torsional edges (pure normal force with +-friction*torsion_radius spin
    torque).  Torques are taken about `center` and scaled by 1/char_radius
    so the 6-D components share units.  Defaults: center = origin,
    char_radius = the largest contact distance from the center.
    """
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    if char_radius is None:
        char_radius = max(float(np.linalg.norm(ct.point - c)) for ct in contacts)
        char_radius = max(char_radius, 1e-6)
    spin = friction * torsion_radius / char_radius
    rows = []
    for ct in contacts:
        u, v = _tangent_basis(ct.normal)
        arm = (ct.point - c) / char_radius
        for j in range(m_sides):
            theta = 2.0 * math.pi * j / m_sides
            f = ct.normal + friction * (math.cos(theta) * u + math.sin(theta) * v)
            rows.append(np.concatenate([f, np.cross(arm, f)]))
        spin_torque = np.cross(arm, ct.normal)
        rows.append(np.concatenate([ct.normal, spin_torque + spin * ct.normal]))
        rows.append(np.concatenate([ct.normal, spin_torque - spin * ct.normal]))
    return np.array(rows)


def force_closure_quality(contacts: Sequence[Contact], params: PhysicsParams,
                          m_sides: int = DEFAULT_M_SIDES,
                          center=None, char_radius: Optional[float] = None,
                          torsion_radius: float = DEFAULT_TORSION_RADIUS) -> float:
    """Ferrari-Canny epsilon: radius of the largest origin-centered ball
    inside the convex hull of the contact wrenches.

    The hull is taken within the linear subspace the wrenches span, so
    contact sets that cannot generate some wrench direction at all (for
    example the spin axis of a two-finger pinch) are scored by their quality
    over the directions they can resist; epsilon is positive iff the
    wrenches positively span that subspace.
    """
    if len(contacts) < 2:
        return 0.0
    W = contact_wrenches(contacts, params.friction, m_sides, center, char_radius,
                         torsion_radius)
    return _ball_radius_in_hull(W)


def _ball_radius_in_hull(W: np.ndarray) -> float:
    # restrict to the linear span of the wrench set
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * max(s[0], 1e-300)))
    if rank < 2:
        return 0.0
    P = W @ Vt[:rank].T
    try:
        hull = ConvexHull(P)
    except QhullError:
        return 0.0
    offsets = hull.equations[:, -1]
    # origin strictly inside iff every facet offset is negative
    eps = float(-np.max(offsets))
    return eps if eps > 0.0 else 0.0


def _balance_feasible(W: np.ndarray, n_contacts: int, m_sides: int,
                      external_wrench: np.ndarray, f_max: float) -> bool:
    """Can nonnegative edge intensities cancel the external wrench with at
    most f_max normal force per contact?"""
    k = W.shape[0]
    per = edges_per_contact(m_sides)
    A_ub = np.zeros((n_contacts, k))
    for i in range(n_contacts):
        A_ub[i, i * per:(i + 1) * per] = 1.0
    res = linprog(
        c=np.zeros(k),
        A_eq=W.T, b_eq=-external_wrench,
        A_ub=A_ub, b_ub=np.full(n_contacts, f_max),
        bounds=[(0.0, None)] * k,
        method="highs",
    )
    return res.status == 0


def lift_success(desc: HandDescription, inst: ShapeInstance, grasp: Grasp,
                 params: PhysicsParams, perturb_sigma: Optional[float] = None,
                 seed: int = 0, table_height: Optional[float] = None,
                 oracle: OracleParams = OracleParams()) -> StabilityVerdict:
    """Quasi-static lift verdict for one grasp under one physics draw.

    Success requires at least two contacts, force closure in the spanned
    wrench subspace, gravity balance within the per-contact force budget,
    and balance under `oracle.disturb_draws` random palm-disturbance forces
    (Gaussian palm displacement times the palm stiffness).  The table is an
    implicit constraint: a palm starting below the object's resting plane is
    rejected outright.  `perturb_sigma` overrides the oracle's palm noise.
    """
    if perturb_sigma is not None and perturb_sigma != oracle.perturb_sigma:
        oracle = OracleParams(f_max=oracle.f_max, k_palm=oracle.k_palm,
                              m_sides=oracle.m_sides, perturb_sigma=perturb_sigma,
                              torsion_radius=oracle.torsion_radius,
                              disturb_draws=oracle.disturb_draws)
    if table_height is None:
        table_height = inst.z_extent()[0]
    if grasp.pregrasp.translation[2] < table_height:
        return StabilityVerdict(False, (), 0.0, reason="palm_below_table")
    try:
        closed = close_fingers(desc, inst, grasp)
    except PregraspCollision:
        return StabilityVerdict(False, (), 0.0, reason="pregrasp_in_collision")
    return _verdict_for_contacts(closed.contacts, inst, params, seed, oracle)


def _verdict_for_contacts(contacts, inst: ShapeInstance, params: PhysicsParams,
                          seed: int, oracle: OracleParams) -> StabilityVerdict:
    if len(contacts) < 2:
        return StabilityVerdict(False, tuple(contacts), 0.0, reason="too_few_contacts")
    center = inst.center()
    rho = inst.bounding_radius()
    eps = force_closure_quality(contacts, params, oracle.m_sides, center, rho,
                                torsion_radius=oracle.torsion_radius)
    if eps <= 1e-12:
        return StabilityVerdict(False, tuple(contacts), eps, reason="no_force_closure")
    W = contact_wrenches(contacts, params.friction, oracle.m_sides, center, rho,
                         torsion_radius=oracle.torsion_radius)
    gravity_wrench = np.array([0.0, 0.0, -params.mass * params.gravity, 0.0, 0.0, 0.0])
    if not _balance_feasible(W, len(contacts), oracle.m_sides, gravity_wrench,
                             oracle.f_max):
        return StabilityVerdict(False, tuple(contacts), eps, reason="gravity_unbalanced")
    rng = np.random.default_rng(seed)
    for d in range(oracle.disturb_draws):
        force = oracle.k_palm * rng.normal(0.0, oracle.perturb_sigma, size=3)
        wrench = gravity_wrench + np.concatenate([force, np.zeros(3)])
        if not _balance_feasible(W, len(contacts), oracle.m_sides, wrench,
                                 oracle.f_max):
            return StabilityVerdict(False, tuple(contacts), eps, failed_draw=d,
                                    reason="disturbance_unbalanced")
    return StabilityVerdict(True, tuple(contacts), eps)
