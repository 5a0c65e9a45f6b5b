import math

import numpy as np
import pytest
from scipy import stats

from isagrasp.baselines import BaselineConfig, heuristic_grasp, ppo_reward, random_grasp
from isagrasp.shapes import TemplateShape, sample_instance


@pytest.fixture(scope="module")
def sphere():
    return sample_instance(TemplateShape.sphere(0.05), seed=0, sigma=0.0)


class TestRandomGrasp:
    def test_zero_ranges_canonical(self, sphere):
        cfg = BaselineConfig(translation_range=0.0, rotation_range=0.0,
                             finger_low=0.7, finger_high=0.7)
        g = random_grasp(sphere, cfg, seed=1)
        np.testing.assert_allclose(g.pregrasp.translation, sphere.center(), atol=1e-12)
        # canonical orientation faces down
        facing = g.pregrasp.rotation.to_matrix()[:, 2]
        np.testing.assert_allclose(facing, [0.0, 0.0, -1.0], atol=1e-9)
        np.testing.assert_allclose(g.fingers, 0.7)

    def test_finger_angles_uniform(self, sphere):
        cfg = BaselineConfig()
        angles = np.concatenate([
            random_grasp(sphere, cfg, seed=s).fingers for s in range(700)
        ])
        res = stats.kstest(angles, stats.uniform(0.5, 0.5).cdf)
        assert res.pvalue > 0.01

    def test_reproducible(self, sphere):
        a = random_grasp(sphere, BaselineConfig(), seed=9)
        b = random_grasp(sphere, BaselineConfig(), seed=9)
        np.testing.assert_array_equal(a.pregrasp.translation, b.pregrasp.translation)
        np.testing.assert_array_equal(a.fingers, b.fingers)

    def test_translation_within_range(self, sphere):
        cfg = BaselineConfig()
        for s in range(100):
            g = random_grasp(sphere, cfg, seed=s)
            assert np.all(np.abs(g.pregrasp.translation - sphere.center()) <= 0.1)


class TestHeuristicGrasp:
    def test_sphere_translation(self, sphere):
        g = heuristic_grasp(sphere)
        z_max = sphere.z_extent()[1]
        np.testing.assert_allclose(g.pregrasp.translation[2], z_max + 0.05, atol=1e-12)
        np.testing.assert_allclose(g.pregrasp.translation[:2], sphere.center()[:2],
                                   atol=1e-12)

    def test_translation_equivariance(self, sphere):
        import dataclasses
        v = np.array([0.02, -0.04, 0.01])
        moved = dataclasses.replace(sphere, points=sphere.points + v,
                                    normals=sphere.normals)
        a = heuristic_grasp(sphere)
        b = heuristic_grasp(moved)
        np.testing.assert_allclose(b.pregrasp.translation,
                                   a.pregrasp.translation + v, atol=1e-9)

    def test_z_is_sample_max_plus_offset(self):
        inst = sample_instance(TemplateShape.rounded_box(0.03, 0.04, 0.05, 0.01), seed=3)
        g = heuristic_grasp(inst)
        assert g.pregrasp.translation[2] == pytest.approx(
            float(inst.points[:, 2].max()) + 0.05, abs=1e-12)

    def test_faces_down(self, sphere):
        g = heuristic_grasp(sphere)
        facing = g.pregrasp.rotation.to_matrix()[:, 2]
        np.testing.assert_allclose(facing, [0.0, 0.0, -1.0], atol=1e-12)


class TestPpoReward:
    def test_perfect_grasp(self):
        tips = np.zeros((4, 3))
        assert ppo_reward(tips, np.zeros(3), 4) == pytest.approx(2.0)

    def test_far_fingers_no_contact(self):
        tips = np.array([[2.5, 0, 0]] * 4)  # each 2.5 m away, sum = 10
        r = ppo_reward(tips, np.zeros(3), 0)
        assert r == pytest.approx(math.exp(-10.0), rel=1e-12)

    def test_matches_recomputation(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            tips = rng.normal(scale=0.1, size=(4, 3))
            center = rng.normal(scale=0.05, size=3)
            nc = int(rng.integers(0, 5))
            expected = math.exp(-sum(np.linalg.norm(t - center) for t in tips)) + nc / 4
            assert ppo_reward(tips, center, nc) == pytest.approx(expected, rel=1e-12)

    def test_bounds_and_monotonicity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            tips = rng.normal(scale=0.2, size=(4, 3))
            center = np.zeros(3)
            r = ppo_reward(tips, center, int(rng.integers(0, 5)))
            assert 0.0 < r <= 2.0
        # moving one fingertip farther away strictly decreases the reward
        tips = np.full((4, 3), 0.05)
        r1 = ppo_reward(tips, np.zeros(3), 2)
        tips2 = tips.copy()
        tips2[1] *= 3.0
        assert ppo_reward(tips2, np.zeros(3), 2) < r1
        # more contacts increase it
        assert ppo_reward(tips, np.zeros(3), 3) > r1
