"""Rejection-sampling grasp refinement under domain randomization.

A candidate grasp is accepted when it lifts successfully under every one of
`randomizations` independent physics draws (mass and friction uniform over
their ranges, plus the palm-disturbance draws inside each lift check).  The
seed grasp is tried unperturbed first, then uniformly perturbed copies.

Seeding is counter-based: the physics draw d of candidate trial t derives
from (seed, t, d), so acceptance decisions are reproducible from the item
seed alone, a prefix of the draws is the same regardless of the totals, and
items can be evaluated in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import RigidTransform, UnitQuaternion
from .hand import HandDescription
from .shapes import ShapeInstance
from .stability import OracleParams, PhysicsParams, lift_success
from .transfer import Grasp

MASS_RANGE = (0.05, 0.25)      # kg
FRICTION_RANGE = (0.7, 1.0)    # Coulomb mu


@dataclass(frozen=True)
class PerturbationRanges:
    dt: float = 0.02   # meters, per translation component
    dr: float = 0.5    # radians, axis-angle components
    df: float = 0.1    # radians, per finger joint

    def __post_init__(self):
        if self.dt < 0 or self.dr < 0 or self.df < 0:
            raise ValueError("perturbation ranges must be nonnegative")


@dataclass(frozen=True)
class TrialRecord:
    trial: int                       # candidate index (0 = unperturbed seed)
    accepted: bool
    failed_randomization: Optional[int] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class RefineOutcome:
    grasp: Optional[Grasp]
    trials: int                      # candidates evaluated
    accepted_trial: Optional[int]
    log: tuple                       # TrialRecord per candidate


@dataclass(frozen=True)
class RefinementReport:
    attempted: int
    refined: int
    item_outcomes: tuple             # RefineOutcome per item

    @property
    def rate(self) -> Optional[float]:
        # undefined on an empty batch
        if self.attempted == 0:
            return None
        return self.refined / self.attempted


def physics_draw(seed: int, trial: int, draw: int,
                 mass_range=MASS_RANGE,
                 friction_range=FRICTION_RANGE) -> tuple[PhysicsParams, int]:
    """Mass/friction draw and lift-disturbance seed for one (trial, draw)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, trial, draw)))
    mass = rng.uniform(*mass_range)
    mu = rng.uniform(*friction_range)
    disturb_seed = int(rng.integers(0, 2**63 - 1))
    return PhysicsParams(mass=mass, friction=mu), disturb_seed


def perturb(desc: HandDescription, grasp: Grasp, ranges: PerturbationRanges,
            seed: int) -> Grasp:
    """Uniform local perturbation of translation, rotation, and fingers.

    Rotation is composed with an axis-angle vector whose components are each
    uniform over +-dr; finger joints are clamped back to their limits.
    """
    rng = np.random.default_rng(seed)
    dt = rng.uniform(-ranges.dt, ranges.dt, size=3)
    dr = rng.uniform(-ranges.dr, ranges.dr, size=3)
    df = rng.uniform(-ranges.df, ranges.df, size=16)
    rotation = UnitQuaternion.from_axis_angle(dr).compose(grasp.pregrasp.rotation)
    fingers = desc.clamp_joints(grasp.fingers + df)
    return Grasp(RigidTransform(grasp.pregrasp.translation + dt, rotation), fingers)


def refine(desc: HandDescription, inst: ShapeInstance, seed_grasp: Grasp,
           ranges: PerturbationRanges = PerturbationRanges(),
           draws: int = 50, randomizations: int = 10, seed: int = 0,
           table_height: Optional[float] = None,
           mass_range=MASS_RANGE, friction_range=FRICTION_RANGE,
           oracle: OracleParams = OracleParams()) -> RefineOutcome:
    """Find a perturbation of the seed grasp that is robust to all physics draws.

    Returns the first accepted candidate (rejection-sampling semantics, no
    best-of selection) or None when the budget is exhausted.
    """
    if draws < 1:
        raise ValueError("draws must be at least 1")
    log = []
    for trial in range(draws + 1):
        if trial == 0:
            candidate = seed_grasp
        else:
            perturb_seed = int(np.random.default_rng(
                np.random.SeedSequence((seed, trial))).integers(0, 2**63 - 1))
            candidate = perturb(desc, seed_grasp, ranges, perturb_seed)
        ok = True
        for d in range(randomizations):
            params, disturb_seed = physics_draw(seed, trial, d,
                                                mass_range, friction_range)
            verdict = lift_success(desc, inst, candidate, params,
                                   seed=disturb_seed, table_height=table_height,
                                   oracle=oracle)
            if not verdict.success:
                log.append(TrialRecord(trial, False, d, verdict.reason))
                ok = False
                break
        if ok:
            log.append(TrialRecord(trial, True))
            return RefineOutcome(grasp=candidate, trials=trial + 1,
                                 accepted_trial=trial, log=tuple(log))
    return RefineOutcome(grasp=None, trials=draws + 1, accepted_trial=None,
                         log=tuple(log))


def batch_refine(desc: HandDescription, items: Sequence[tuple[ShapeInstance, Grasp]],
                 ranges: PerturbationRanges = PerturbationRanges(),
                 draws: int = 50, randomizations: int = 10,
                 master_seed: int = 0,
                 mass_range=MASS_RANGE, friction_range=FRICTION_RANGE,
                 oracle: OracleParams = OracleParams()) -> RefinementReport:
    """Refine a batch of (instance, seed grasp) items with derived seeds.

    Item seeds derive from (master_seed, item index), so the report does not
    depend on evaluation order.
    """
    outcomes = []
    refined = 0
    for idx, (inst, grasp) in enumerate(items):
        item_seed = item_refine_seed(master_seed, idx)
        out = refine(desc, inst, grasp, ranges, draws, randomizations,
                     seed=item_seed, mass_range=mass_range,
                     friction_range=friction_range, oracle=oracle)
        outcomes.append(out)
        refined += out.grasp is not None
    return RefinementReport(attempted=len(outcomes), refined=refined,
                            item_outcomes=tuple(outcomes))


def item_refine_seed(master_seed: int, item_index: int) -> int:
    return int(np.random.default_rng(
        np.random.SeedSequence((master_seed, 0xBA7C4, item_index))).integers(0, 2**63 - 1))


def verify_accepted(desc: HandDescription, inst: ShapeInstance, outcome: RefineOutcome,
                    randomizations: int = 10, seed: int = 0,
                    table_height: Optional[float] = None,
                    mass_range=MASS_RANGE, friction_range=FRICTION_RANGE,
                    oracle: OracleParams = OracleParams()) -> bool:
    """Replay an accepted grasp's randomization draws; True if all succeed."""
    if outcome.grasp is None or outcome.accepted_trial is None:
        return False
    trial = outcome.accepted_trial
    for d in range(randomizations):
        params, disturb_seed = physics_draw(seed, trial, d, mass_range, friction_range)
        if not lift_success(desc, inst, outcome.grasp, params,
                            seed=disturb_seed, table_height=table_height,
                            oracle=oracle).success:
            return False
    return True
