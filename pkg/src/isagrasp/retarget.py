"""Human-to-robot grasp retargeting.

Maps one demonstration frame (four fingertip keypoints, a palm frame, an
object pose) onto the 22-DoF hand by minimizing a weighted sum of three
geometric discrepancy terms:

  d_g  fingertip-to-palm displacement mismatch, scaled by the hand size ratio
  d_c  fingertip position mismatch relative to the object center
  d_r  geodesic distance between the palm orientations

The optimizer is multi-start projected gradient descent with central-difference
gradients (h = 1e-5); the base rotation is stepped through axis-angle
increments composed onto the current quaternion, and finger joints are clamped
to their limits after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import Frame3, RigidTransform, UnitQuaternion, geodesic_distance
from .hand import HandDescription, HandPose, _fingertips_raw, forward_kinematics


@dataclass(frozen=True)
class DemoRecord:
    """One demonstrated grasp frame: keypoints in thumb/index/middle/ring order."""

    human_fingertips: np.ndarray   # (4, 3) meters
    human_palm: Frame3
    object_pose: RigidTransform
    object_center: np.ndarray      # (3,) meters

    def __post_init__(self):
        tips = np.array(self.human_fingertips, dtype=float)
        center = np.array(self.object_center, dtype=float)
        if tips.shape != (4, 3):
            raise ValueError("human_fingertips must be (4, 3)")
        if not (np.all(np.isfinite(tips)) and np.all(np.isfinite(center))):
            raise ValueError("demo record contains non-finite values")
        tips.flags.writeable = False
        center.flags.writeable = False
        object.__setattr__(self, "human_fingertips", tips)
        object.__setattr__(self, "object_center", center)


@dataclass(frozen=True)
class RetargetWeights:
    w_g: float = 1.0
    w_c: float = 1.0
    w_r: float = 0.5

    def __post_init__(self):
        if self.w_g < 0 or self.w_c < 0 or self.w_r < 0:
            raise ValueError("weights must be nonnegative")
        if self.w_g == 0 and self.w_c == 0 and self.w_r == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class RetargetOptions:
    restarts: int = 8          # random restarts beyond the aligned init
    max_iters: int = 500
    grad_tol: float = 1e-6
    fd_step: float = 1e-5
    seed: int = 0
    # stop trying further starts once a start reaches this objective
    target_objective: float = 1e-7


@dataclass(frozen=True)
class RetargetResult:
    pose: HandPose
    objective: float
    term_values: np.ndarray    # (d_g, d_c, d_r) at the returned pose
    converged: bool
    start_index: int
    trace: tuple               # accepted objective values of the winning start


def cost_dg(desc: HandDescription, pose: HandPose, demo: DemoRecord) -> float:
    """Sum of squared fingertip-palm displacement errors (m^2), Eq. d_g."""
    fk = forward_kinematics(desc, pose)
    a_r = fk.fingertips - pose.base.translation
    a_h = demo.human_fingertips - demo.human_palm.origin
    return float(np.sum((a_r - desc.scale_ratio * a_h) ** 2))


def cost_dc(desc: HandDescription, pose: HandPose, demo: DemoRecord) -> float:
    """Sum of squared object-relative fingertip errors (m^2)."""
    fk = forward_kinematics(desc, pose)
    c_r = fk.fingertips - demo.object_center
    c_h = demo.human_fingertips - demo.object_center
    return float(np.sum((c_r - c_h) ** 2))


def cost_dr(desc: HandDescription, pose: HandPose, demo: DemoRecord) -> float:
    """Geodesic distance between robot palm and human palm orientations (rad)."""
    fk = forward_kinematics(desc, pose)
    return geodesic_distance(fk.palm_frame.axes, demo.human_palm.axes)


def objective_terms(desc: HandDescription, pose: HandPose, demo: DemoRecord) -> np.ndarray:
    return np.array([cost_dg(desc, pose, demo),
                     cost_dc(desc, pose, demo),
                     cost_dr(desc, pose, demo)])


# ---------------------------------------------------------------------------
# scalar-math objective for the optimizer hot loop
# ---------------------------------------------------------------------------

def _quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2)


def _axis_angle_quat(v0, v1, v2):
    angle = math.sqrt(v0 * v0 + v1 * v1 + v2 * v2)
    if angle < 1e-12:
        return (1.0, 0.5 * v0, 0.5 * v1, 0.5 * v2)
    s = math.sin(0.5 * angle) / angle
    return (math.cos(0.5 * angle), v0 * s, v1 * s, v2 * s)


def _quat_to_mat(q):
    w, x, y, z = q
    n = w * w + x * x + y * y + z * z
    s = 2.0 / n
    xx, yy, zz = x * x * s, y * y * s, z * z * s
    wx, wy, wz = w * x * s, w * y * s, w * z * s
    xy, xz, yz = x * y * s, x * z * s, y * z * s
    return ((1.0 - yy - zz, xy - wz, xz + wy),
            (xy + wz, 1.0 - xx - zz, yz - wx),
            (xz - wy, yz + wx, 1.0 - xx - yy))


class _Objective:
    """Plain-float evaluation of the weighted retargeting objective.

    The rotation term is evaluated through the relative quaternion's
    atan2 angle, which is exactly the geodesic distance but avoids the
    catastrophic rounding of acos(trace) near aligned palms (the public
    cost_dr keeps the trace closed form; both agree to ~1e-8 which is far
    below the optimizer's needs).
    """

    def __init__(self, desc: HandDescription, demo: DemoRecord, weights: RetargetWeights):
        self.desc = desc
        self.w = weights
        s = desc.scale_ratio
        palm = demo.human_palm.origin
        self.scaled_disp = tuple(
            tuple(s * (demo.human_fingertips[i, k] - palm[k]) for k in range(3))
            for i in range(4))
        self.h_rel = tuple(
            tuple(demo.human_fingertips[i, k] - demo.object_center[k] for k in range(3))
            for i in range(4))
        self.center = tuple(float(v) for v in demo.object_center)
        qh = UnitQuaternion.from_matrix(demo.human_palm.axes)
        self.qh_inv = (qh.w, -qh.x, -qh.y, -qh.z)

    def value(self, t, q, f) -> float:
        R = _quat_to_mat(q)
        tips = _fingertips_raw(self.desc, R, t, f)
        dg = 0.0
        dc = 0.0
        for i in range(4):
            tx, ty, tz = tips[i]
            sd = self.scaled_disp[i]
            dg += ((tx - t[0] - sd[0]) ** 2 + (ty - t[1] - sd[1]) ** 2
                   + (tz - t[2] - sd[2]) ** 2)
            hr = self.h_rel[i]
            dc += ((tx - self.center[0] - hr[0]) ** 2 + (ty - self.center[1] - hr[1]) ** 2
                   + (tz - self.center[2] - hr[2]) ** 2)
        rw, rx, ry, rz = _quat_mul(q, self.qh_inv)
        dr = 2.0 * math.atan2(math.sqrt(rx * rx + ry * ry + rz * rz), abs(rw))
        return self.w.w_g * dg + self.w.w_c * dc + self.w.w_r * dr


def _aligned_init(desc: HandDescription, demo: DemoRecord) -> tuple[np.ndarray, UnitQuaternion, np.ndarray]:
    """Start with the palm aligned to the demo and fingers lightly flexed."""
    q = UnitQuaternion.from_matrix(demo.human_palm.axes)
    s = desc.scale_ratio
    palm = demo.human_palm.origin
    # place the palm so scaled displacements land near the human fingertips
    t = np.mean([demo.human_fingertips[i] - s * (demo.human_fingertips[i] - palm)
                 for i in range(4)], axis=0)
    fingers = np.zeros(16)
    fingers[1::4] = fingers[2::4] = fingers[3::4] = 0.4
    return t, q, fingers


_ALL_COORDS = tuple(range(22))
_FINGER_COORDS = tuple(range(6, 22))


def _descend(obj: _Objective, desc: HandDescription, t0, q0, f0,
             opts: RetargetOptions, coords=_ALL_COORDS, max_iters=None,
             target=-math.inf):
    """Projected gradient descent over the given coordinate subset.

    Coordinates 0-2 are the base translation, 3-5 axis-angle increments on
    the base rotation, 6-21 the finger joints.  The trial step size comes
    from a Barzilai-Borwein estimate, safeguarded by monotone backtracking.
    Stops early once the value drops to `target`.
    Returns (t, q, f, value, trace, converged).
    """
    lo = desc.joint_limits[:, 0].tolist()
    hi = desc.joint_limits[:, 1].tolist()
    t = list(map(float, t0))
    q = (q0.w, q0.x, q0.y, q0.z) if isinstance(q0, UnitQuaternion) else tuple(q0)
    f = [min(hi[j], max(lo[j], float(f0[j]))) for j in range(16)]
    h = opts.fd_step
    val = obj.value(t, q, f)
    trace = [val]
    alpha = 0.05
    prev_grad = None
    prev_step = None
    converged = val <= target
    iters = 0 if converged else (opts.max_iters if max_iters is None else max_iters)

    for _ in range(iters):
        grad = [0.0] * 22
        for k in coords:
            if k < 3:
                tp = list(t)
                tp[k] = t[k] + h
                vp = obj.value(tp, q, f)
                tp[k] = t[k] - h
                vm = obj.value(tp, q, f)
            elif k < 6:
                v = [0.0, 0.0, 0.0]
                v[k - 3] = h
                vp = obj.value(t, _quat_mul(_axis_angle_quat(*v), q), f)
                v[k - 3] = -h
                vm = obj.value(t, _quat_mul(_axis_angle_quat(*v), q), f)
            else:
                j = k - 6
                fp = list(f)
                fp[j] = f[j] + h
                vp = obj.value(t, q, fp)
                fp[j] = f[j] - h
                vm = obj.value(t, q, fp)
            grad[k] = (vp - vm) / (2.0 * h)

        # projected gradient: joints pinned at a limit contribute nothing
        pg2 = 0.0
        for k in coords:
            g = grad[k]
            if k >= 6:
                j = k - 6
                if (f[j] <= lo[j] and g > 0.0) or (f[j] >= hi[j] and g < 0.0):
                    grad[k] = 0.0
                    continue
            pg2 += g * g
        if math.sqrt(pg2) < opts.grad_tol:
            converged = True
            break

        # Barzilai-Borwein trial step from the last (step, gradient-change) pair
        if prev_grad is not None:
            sy = 0.0
            yy = 0.0
            for k in coords:
                y = grad[k] - prev_grad[k]
                sy += prev_step[k] * y
                yy += y * y
            if sy > 0.0 and yy > 0.0:
                alpha = min(max(sy / yy, 1e-7), 10.0)

        # backtracking line search along the negative gradient
        accepted = False
        a = alpha
        for _ in range(45):
            t_new = [t[k] - a * grad[k] for k in range(3)]
            q_new = _quat_mul(_axis_angle_quat(-a * grad[3], -a * grad[4], -a * grad[5]), q)
            f_new = [min(hi[k], max(lo[k], f[k] - a * grad[6 + k])) for k in range(16)]
            v_new = obj.value(t_new, q_new, f_new)
            if v_new < val:
                prev_step = ([t_new[k] - t[k] for k in range(3)]
                             + [-a * grad[3], -a * grad[4], -a * grad[5]]
                             + [f_new[k] - f[k] for k in range(16)])
                prev_grad = grad
                t, q, f, val = t_new, q_new, f_new, v_new
                trace.append(val)
                alpha = a
                accepted = True
                break
            a *= 0.5
        if not accepted:
            # no descent direction at machine resolution: stationary point
            converged = True
            break
        if val <= target:
            converged = True
            break

    return t, q, f, val, trace, converged


_NO_ROT_COORDS = (0, 1, 2) + _FINGER_COORDS


def _staged_descent(obj: _Objective, desc: HandDescription, t0, q0, f0,
                    opts: RetargetOptions, target=-math.inf,
                    final_coords=_ALL_COORDS):
    """Block pre-solves (per-finger chains, then base translation), twice,
    before releasing the remaining coordinates.

    The finger pre-solve is the same projected descent restricted to one
    finger's four joints; it steers the full descent away from the
    translation-compensates-fingers local minima that plague cold starts.
    """
    t, q, f = list(map(float, t0)), q0, list(map(float, f0))
    trace_head = []
    val = None
    for round_iters in (150, 80):
        for i in range(4):
            coords = tuple(range(6 + 4 * i, 10 + 4 * i))
            t, q, f, val, tr, conv = _descend(obj, desc, t, q, f, opts,
                                              coords=coords, max_iters=round_iters,
                                              target=target)
            trace_head.extend(tr[:-1])
            if val <= target:
                return t, q, f, val, trace_head + [val], conv
        t, q, f, val, tr, conv = _descend(obj, desc, t, q, f, opts,
                                          coords=(0, 1, 2), max_iters=60, target=target)
        trace_head.extend(tr[:-1])
        if val <= target:
            return t, q, f, val, trace_head + [val], conv
    t, q, f, val, tr, conv = _descend(obj, desc, t, q, f, opts, target=target,
                                      coords=final_coords)
    # stage traces concatenate into one non-increasing sequence
    trace = trace_head + tr
    return t, q, f, val, trace, conv


def retarget(desc: HandDescription, demo: DemoRecord,
             weights: RetargetWeights = RetargetWeights(),
             opts: RetargetOptions = RetargetOptions()) -> RetargetResult:
    """Find a 22-DoF hand pose minimizing the weighted retargeting objective.

    Runs an aligned-palm start plus `opts.restarts` randomized starts, each
    descended independently; restart RNG streams are derived per start index
    so results do not depend on evaluation order.  The best (lowest-objective)
    start wins, ties broken by start index.  `converged` is False only when
    no start reached a stationary point within its iteration budget.
    """
    obj = _Objective(desc, demo, weights)
    t0, q0, f0 = _aligned_init(desc, demo)

    best = None
    any_converged = False
    target = opts.target_objective
    for k in range(2 + opts.restarts):
        if k == 0:
            t, q, f, val, trace, conv = _staged_descent(obj, desc, t0, q0, f0, opts,
                                                        target=target)
        elif k == 1:
            # palm-snap start: re-descend from the current best with the base
            # rotation frozen exactly at the demo palm; the finite differences
            # cannot see the rotation-term kink below the step size, so the
            # drift it causes is refunded here instead
            tb, fb = best[0], best[2]
            t, q, f, val, trace, conv = _staged_descent(obj, desc, tb, q0, fb, opts,
                                                        target=target,
                                                        final_coords=_NO_ROT_COORDS)
        else:
            rng = np.random.default_rng(np.random.SeedSequence((opts.seed, k)))
            t_r = t0 + rng.normal(scale=0.03, size=3)
            q_r = UnitQuaternion.from_axis_angle(rng.normal(scale=0.35, size=3)).compose(q0)
            f_r = rng.uniform(desc.joint_limits[:, 0], desc.joint_limits[:, 1])
            t, q, f, val, trace, conv = _staged_descent(obj, desc, t_r, q_r, f_r, opts,
                                                        target=target)
        any_converged = any_converged or conv
        if best is None or val < best[3]:
            best = (t, q, f, val, trace, k)
        if best[3] <= target:
            break

    t, q, f, _, trace, start_idx = best
    pose = HandPose(
        base=RigidTransform(np.array(t), UnitQuaternion(*q)),
        fingers=np.array(f),
    )
    terms = objective_terms(desc, pose, demo)
    total = weights.w_g * terms[0] + weights.w_c * terms[1] + weights.w_r * terms[2]
    return RetargetResult(
        pose=pose,
        objective=float(total),
        term_values=terms,
        converged=any_converged,
        start_index=start_idx,
        trace=tuple(trace),
    )
