import math

import numpy as np
import pytest

from smfvo.errors import InsufficientObservations
from smfvo.geometry import Pose, rotation_angle, so3_exp
from smfvo.keyframe import (
    KeyframePolicy,
    KeyframeState,
    Landmark,
    OptimizerParams,
    cauchy_loss,
    optimize_keyframe,
    robust_cost,
    robust_cost_gradient,
    should_create_keyframe,
)


def make_problem(
    rng,
    n_landmarks=40,
    n_fixed=2,
    ray_noise=0.0,
    pose_rot_deg=0.0,
    pose_trans=0.0,
    lm_rel_noise=0.0,
):
    """Multi-keyframe ray problem with known ground truth.

    Returns (active, fixed_kfs, landmarks, true_pose, true_points).
    """
    truth = np.stack(
        [
            rng.uniform(-2.5, 2.5, n_landmarks),
            rng.uniform(-2.0, 2.0, n_landmarks),
            rng.uniform(4.0, 9.0, n_landmarks),
        ],
        axis=-1,
    )

    def observe(pose):
        q = (truth - pose.t) @ pose.R
        rays = q / np.linalg.norm(q, axis=-1, keepdims=True)
        if ray_noise > 0:
            rays = rays + rng.normal(scale=ray_noise, size=rays.shape)
            rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
        return {i: rays[i] for i in range(n_landmarks)}

    fixed = []
    for k in range(n_fixed):
        pose = Pose(
            so3_exp(rng.uniform(-0.03, 0.03, 3)),
            np.array([0.6 * k - 0.3, 0.15 * k, 0.05 * k]),
        )
        fixed.append(KeyframeState(k, pose, observe(pose), fixed=True))

    true_pose = Pose(
        so3_exp(rng.uniform(-0.05, 0.05, 3)), np.array([0.25, -0.2, 0.35])
    )
    rot_err = rng.normal(size=3)
    rot_err *= math.radians(pose_rot_deg) / np.linalg.norm(rot_err)
    t_err = rng.normal(size=3)
    t_err *= pose_trans / np.linalg.norm(t_err)
    start_pose = Pose(true_pose.R @ so3_exp(rot_err), true_pose.t + t_err)
    active = KeyframeState(n_fixed, start_pose, observe(true_pose))

    landmarks = {}
    for i in range(n_landmarks):
        p = truth[i] * (1.0 + lm_rel_noise * rng.normal(size=3))
        landmarks[i] = Landmark(i, p, {kf.id for kf in fixed} | {active.id})
    return active, fixed, landmarks, true_pose, truth


def pose_error(a: Pose, b: Pose) -> float:
    return rotation_angle(a.R.T @ b.R) + float(np.linalg.norm(a.t - b.t))


class TestPolicy:
    def setup_method(self):
        self.policy = KeyframePolicy()
        self.identity = (np.eye(3), np.zeros(3))

    def test_low_inliers_triggers(self):
        R, t = self.identity
        assert should_create_keyframe(
            self.policy.min_inliers - 1, 1, R, t, self.policy
        )

    def test_fresh_frame_does_not_trigger(self):
        R, t = self.identity
        assert not should_create_keyframe(500, 0, R, t, self.policy)

    def test_rotation_threshold(self):
        R = so3_exp(np.array([0.0, self.policy.rot_thresh + 1e-6, 0.0]))
        assert should_create_keyframe(500, 0, R, np.zeros(3), self.policy)

    def test_translation_threshold(self):
        t = np.array([self.policy.trans_thresh + 1e-6, 0.0, 0.0])
        assert should_create_keyframe(500, 0, np.eye(3), t, self.policy)

    def test_elapsed_threshold(self):
        R, t = self.identity
        assert should_create_keyframe(500, self.policy.max_elapsed + 1, R, t, self.policy)


class TestCauchy:
    def test_zero(self):
        value, weight = cauchy_loss(0.0, 1.0)
        assert value == 0.0
        assert weight == 1.0

    def test_unit(self):
        value, _ = cauchy_loss(1.0, 1.0)
        assert value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_asymptotics(self):
        v1, w1 = cauchy_loss(1e4, 0.5)
        v2, w2 = cauchy_loss(1e8, 0.5)
        assert v2 - v1 == pytest.approx(0.25 * math.log(1e4), rel=1e-3)
        assert w2 < w1 < 1e-3

    def test_vectorized(self):
        value, weight = cauchy_loss(np.array([0.0, 1.0]), 1.0)
        assert value.shape == (2,)
        assert weight[0] == 1.0


class TestOptimizer:
    def test_recovers_perturbed_pose(self):
        rng = np.random.default_rng(0)
        active, fixed, landmarks, true_pose, truth = make_problem(
            rng, pose_rot_deg=1.0, pose_trans=0.05, lm_rel_noise=0.01
        )
        start_cost = robust_cost(active, fixed, landmarks, OptimizerParams())
        pose, refined, trace = optimize_keyframe(
            active, fixed, landmarks, OptimizerParams(max_iters=30)
        )
        assert pose_error(pose, true_pose) < 1e-6
        assert trace[-1] < 1e-4 * max(start_cost, 1e-300)
        lm_err = np.array([np.linalg.norm(refined[i] - truth[i]) for i in refined])
        assert np.median(lm_err) < 1e-5

    def test_cost_non_increasing(self):
        rng = np.random.default_rng(1)
        for k in range(10):
            active, fixed, landmarks, _, _ = make_problem(
                rng, n_landmarks=25, ray_noise=2e-3,
                pose_rot_deg=0.5, pose_trans=0.03, lm_rel_noise=0.02,
            )
            _, _, trace = optimize_keyframe(active, fixed, landmarks)
            assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_already_optimal_fixed_point(self):
        rng = np.random.default_rng(2)
        active, fixed, landmarks, true_pose, _ = make_problem(rng)
        # observations built at the true pose and true landmarks: cost 0
        pose, _, trace = optimize_keyframe(active, fixed, landmarks)
        assert len(trace) == 1
        assert pose_error(pose, active.pose) < 1e-12

    def test_fixed_poses_untouched(self):
        rng = np.random.default_rng(3)
        active, fixed, landmarks, _, _ = make_problem(
            rng, pose_rot_deg=1.0, pose_trans=0.05, lm_rel_noise=0.01
        )
        before = [(kf.pose.R.copy(), kf.pose.t.copy()) for kf in fixed]
        optimize_keyframe(active, fixed, landmarks)
        for kf, (R0, t0) in zip(fixed, before):
            assert np.array_equal(kf.pose.R, R0)
            assert np.array_equal(kf.pose.t, t0)

    def test_rotation_stays_on_manifold(self):
        rng = np.random.default_rng(4)
        active, fixed, landmarks, _, _ = make_problem(
            rng, ray_noise=5e-3, pose_rot_deg=2.0, pose_trans=0.1, lm_rel_noise=0.03
        )
        pose, _, _ = optimize_keyframe(
            active, fixed, landmarks, OptimizerParams(max_iters=50)
        )
        assert np.linalg.norm(pose.R.T @ pose.R - np.eye(3)) < 1e-9

    def test_insufficient_observations(self):
        rng = np.random.default_rng(5)
        active, fixed, landmarks, _, _ = make_problem(rng, n_landmarks=5)
        with pytest.raises(InsufficientObservations):
            optimize_keyframe(active, fixed, landmarks)

    def test_single_observation_landmarks_tolerated(self):
        rng = np.random.default_rng(6)
        active, fixed, landmarks, _, _ = make_problem(
            rng, pose_rot_deg=0.5, pose_trans=0.02
        )
        # strip some landmarks from all fixed keyframes: only the active sees them
        for kf in fixed:
            for i in range(10):
                kf.observations.pop(i, None)
        pose, refined, trace = optimize_keyframe(active, fixed, landmarks)
        assert len(refined) == len(landmarks)
        assert trace[-1] <= trace[0]


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for k in range(20):
            active, fixed, landmarks, _, _ = make_problem(
                rng, n_landmarks=12, ray_noise=5e-3,
                pose_rot_deg=0.8, pose_trans=0.04, lm_rel_noise=0.02,
            )
            params = OptimizerParams()
            cost, g_pose, g_lm = robust_cost_gradient(active, fixed, landmarks, params)
            eps = 1e-6

            fd_pose = np.zeros(6)
            for i in range(6):
                delta = np.zeros(6)
                delta[i] = eps
                plus = Pose(
                    active.pose.R @ so3_exp(delta[:3]), active.pose.t + delta[3:]
                )
                delta[i] = -eps
                minus = Pose(
                    active.pose.R @ so3_exp(delta[:3]), active.pose.t + delta[3:]
                )
                fd_pose[i] = (
                    robust_cost(active, fixed, landmarks, params, pose=plus)
                    - robust_cost(active, fixed, landmarks, params, pose=minus)
                ) / (2 * eps)
            scale = max(np.linalg.norm(g_pose), np.linalg.norm(fd_pose), 1e-9)
            worst = max(worst, np.linalg.norm(g_pose - fd_pose) / scale)

            for l in list(g_lm)[:3]:
                fd = np.zeros(3)
                for i in range(3):
                    for sign in (1.0, -1.0):
                        p = landmarks[l].position.copy()
                        p[i] += sign * eps
                        c = robust_cost(
                            active, fixed, landmarks, params, positions={l: p}
                        )
                        fd[i] += sign * c / (2 * eps)
                scale = max(np.linalg.norm(g_lm[l]), np.linalg.norm(fd), 1e-9)
                worst = max(worst, np.linalg.norm(g_lm[l] - fd) / scale)
        assert worst < 1e-5
