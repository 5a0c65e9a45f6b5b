import dataclasses
import time

import numpy as np
import pytest

from isagrasp.geometry import Frame3, RigidTransform, UnitQuaternion, geodesic_distance
from isagrasp.hand import HandPose, default_description, forward_kinematics
from isagrasp.retarget import (
    DemoRecord,
    RetargetOptions,
    RetargetWeights,
    cost_dc,
    cost_dg,
    cost_dr,
    objective_terms,
    retarget,
)


@pytest.fixture(scope="module")
def desc():
    return default_description()


@pytest.fixture(scope="module")
def unit_scale_desc():
    return dataclasses.replace(default_description(), scale_ratio=1.0)


def random_pose(desc, rng, spread=0.6):
    lo, hi = desc.joint_limits[:, 0], desc.joint_limits[:, 1]
    mid = 0.5 * (lo + hi)
    fingers = np.clip(mid + rng.normal(scale=spread * 0.25, size=16) * (hi - lo), lo, hi)
    base = RigidTransform(rng.normal(scale=0.1, size=3), UnitQuaternion.random(rng))
    return HandPose(base=base, fingers=fingers)


def demo_from_pose(desc, pose, object_center=None):
    """Read a posed hand's own fingertips back as a demonstration."""
    fk = forward_kinematics(desc, pose)
    center = np.zeros(3) if object_center is None else np.asarray(object_center)
    return DemoRecord(
        human_fingertips=fk.fingertips,
        human_palm=fk.palm_frame,
        object_pose=RigidTransform.identity(),
        object_center=center,
    )


class TestCostTerms:
    def test_dg_zero_when_displacements_match(self, unit_scale_desc):
        rng = np.random.default_rng(0)
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose)
        assert cost_dg(unit_scale_desc, pose, demo) == pytest.approx(0.0, abs=1e-18)

    def test_dg_single_offset_term(self, unit_scale_desc):
        rng = np.random.default_rng(1)
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose)
        tips = demo.human_fingertips.copy()
        tips[2] += np.array([0.01, 0.0, 0.0])  # offset one target by 1 cm
        demo2 = dataclasses.replace(demo, human_fingertips=tips)
        assert cost_dg(unit_scale_desc, pose, demo2) == pytest.approx(1e-4, rel=1e-9)

    def test_dg_matches_straight_line_recomputation(self, desc):
        rng = np.random.default_rng(2)
        for _ in range(20):
            pose = random_pose(desc, rng)
            demo = demo_from_pose(desc, random_pose(desc, rng))
            fk = forward_kinematics(desc, pose)
            expected = 0.0
            for i in range(4):
                a_r = fk.fingertips[i] - pose.base.translation
                a_h = demo.human_fingertips[i] - demo.human_palm.origin
                expected += np.sum((a_r - desc.scale_ratio * a_h) ** 2)
            assert cost_dg(desc, pose, demo) == pytest.approx(expected, rel=1e-12)

    def test_dc_zero_when_tips_coincide(self, unit_scale_desc):
        rng = np.random.default_rng(3)
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose, object_center=[0.05, 0.0, 0.0])
        assert cost_dc(unit_scale_desc, pose, demo) == pytest.approx(0.0, abs=1e-18)

    def test_dc_uniform_offset(self, unit_scale_desc):
        rng = np.random.default_rng(4)
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose)
        tips = demo.human_fingertips + np.array([0.0, 0.02, 0.0])
        demo2 = dataclasses.replace(demo, human_fingertips=tips)
        assert cost_dc(unit_scale_desc, pose, demo2) == pytest.approx(4 * 0.02 ** 2, rel=1e-9)

    def test_dc_matches_straight_line_recomputation(self, desc):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pose = random_pose(desc, rng)
            demo = demo_from_pose(desc, random_pose(desc, rng), object_center=rng.normal(size=3))
            fk = forward_kinematics(desc, pose)
            expected = 0.0
            for i in range(4):
                c_r = fk.fingertips[i] - demo.object_center
                c_h = demo.human_fingertips[i] - demo.object_center
                expected += np.sum((c_r - c_h) ** 2)
            assert cost_dc(desc, pose, demo) == pytest.approx(expected, rel=1e-12)

    def test_dr_aligned_palms(self, desc):
        rng = np.random.default_rng(6)
        pose = random_pose(desc, rng)
        demo = demo_from_pose(desc, pose)
        assert cost_dr(desc, pose, demo) == pytest.approx(0.0, abs=1e-7)

    def test_dr_half_turn(self, desc):
        rng = np.random.default_rng(7)
        pose = random_pose(desc, rng)
        demo = demo_from_pose(desc, pose)
        flip = UnitQuaternion.from_axis_angle([np.pi, 0.0, 0.0])
        palm = Frame3(demo.human_palm.origin,
                      flip.to_matrix() @ demo.human_palm.axes)
        demo2 = dataclasses.replace(demo, human_palm=palm)
        # acos is ill-conditioned at the antipode; 1e-6 rad is the practical floor
        assert cost_dr(desc, pose, demo2) == pytest.approx(np.pi, abs=1e-6)

    def test_dr_matches_geodesic(self, desc):
        rng = np.random.default_rng(8)
        pose = random_pose(desc, rng)
        demo = demo_from_pose(desc, random_pose(desc, rng))
        fk = forward_kinematics(desc, pose)
        assert cost_dr(desc, pose, demo) == pytest.approx(
            geodesic_distance(fk.palm_frame.axes, demo.human_palm.axes), abs=1e-15)


class TestRigidInvariance:
    def test_costs_invariant_under_common_transform(self, desc):
        rng = np.random.default_rng(9)
        w = RetargetWeights()
        for _ in range(10):
            pose = random_pose(desc, rng)
            demo = demo_from_pose(desc, random_pose(desc, rng), object_center=rng.normal(size=3))
            T = RigidTransform(rng.normal(size=3), UnitQuaternion.random(rng))
            R = T.rotation.to_matrix()
            demo_t = DemoRecord(
                human_fingertips=np.array([T.apply(p) for p in demo.human_fingertips]),
                human_palm=Frame3(T.apply(demo.human_palm.origin), R @ demo.human_palm.axes),
                object_pose=T.compose(demo.object_pose),
                object_center=T.apply(demo.object_center),
            )
            pose_t = HandPose(base=T.compose(pose.base), fingers=pose.fingers)
            a = objective_terms(desc, pose, demo)
            b = objective_terms(desc, pose_t, demo_t)
            np.testing.assert_allclose(a, b, atol=1e-9)


class TestRetarget:
    def test_round_trip_recovery(self, unit_scale_desc):
        rng = np.random.default_rng(10)
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose)
        res = retarget(unit_scale_desc, demo, opts=RetargetOptions(seed=1))
        assert res.objective < 1e-6

    def test_position_only_weights(self, unit_scale_desc):
        rng = np.random.default_rng(11)
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose)
        res = retarget(unit_scale_desc, demo, weights=RetargetWeights(1.0, 0.0, 0.0),
                       opts=RetargetOptions(seed=2))
        assert res.term_values[0] < 1e-5

    def test_descent_contract(self, desc):
        # solution is never worse than the aligned initial pose
        rng = np.random.default_rng(12)
        demo = demo_from_pose(desc, random_pose(desc, rng))
        w = RetargetWeights()
        res = retarget(desc, demo, weights=w, opts=RetargetOptions(seed=3, restarts=2,
                                                                   max_iters=100))
        assert res.objective <= res.trace[0] + 1e-15

    def test_trace_monotone_nonincreasing(self, desc):
        rng = np.random.default_rng(13)
        demo = demo_from_pose(desc, random_pose(desc, rng))
        res = retarget(desc, demo, opts=RetargetOptions(seed=4, restarts=1, max_iters=150))
        trace = np.array(res.trace)
        assert np.all(np.diff(trace) <= 0.0)

    def test_objective_equals_weighted_terms_exactly(self, desc):
        rng = np.random.default_rng(14)
        demo = demo_from_pose(desc, random_pose(desc, rng))
        w = RetargetWeights(0.7, 1.3, 0.4)
        res = retarget(desc, demo, weights=w, opts=RetargetOptions(seed=5, restarts=1,
                                                                   max_iters=50))
        dg = cost_dg(desc, res.pose, demo)
        dc = cost_dc(desc, res.pose, demo)
        dr = cost_dr(desc, res.pose, demo)
        assert res.objective == w.w_g * dg + w.w_c * dc + w.w_r * dr

    def test_deterministic_per_seed(self, desc):
        rng = np.random.default_rng(15)
        demo = demo_from_pose(desc, random_pose(desc, rng))
        opts = RetargetOptions(seed=6, restarts=2, max_iters=80)
        a = retarget(desc, demo, opts=opts)
        b = retarget(desc, demo, opts=opts)
        np.testing.assert_array_equal(a.pose.fingers, b.pose.fingers)
        np.testing.assert_array_equal(a.pose.base.translation, b.pose.base.translation)
        assert a.objective == b.objective

    def test_joint_limits_respected(self, desc):
        rng = np.random.default_rng(16)
        demo = demo_from_pose(desc, random_pose(desc, rng))
        res = retarget(desc, demo, opts=RetargetOptions(seed=7, restarts=1, max_iters=60))
        lo, hi = desc.joint_limits[:, 0], desc.joint_limits[:, 1]
        assert np.all(res.pose.fingers >= lo - 1e-12)
        assert np.all(res.pose.fingers <= hi + 1e-12)


@pytest.mark.slow
def test_round_trip_batch_speed(unit_scale_desc):
    rng = np.random.default_rng(17)
    t0 = time.time()
    hits = 0
    for i in range(10):
        pose = random_pose(unit_scale_desc, rng)
        demo = demo_from_pose(unit_scale_desc, pose)
        res = retarget(unit_scale_desc, demo, opts=RetargetOptions(seed=100 + i))
        if res.objective < 1e-6:
            hits += 1
    elapsed = time.time() - t0
    assert hits >= 9
    assert elapsed < 12.0
