import numpy as np
import pytest
from conftest import gentle_twist, pinhole_camera, rendered_scene, stereo_rig

from smfvo.config import PipelineConfig
from smfvo.errors import ImageSizeMismatch, NonMonotonicTimestamp
from smfvo.geometry import Pose, so3_exp
from smfvo.motion_field import Twist, integrate_twist, relative_twist
from smfvo.pipeline import STATS_HEADER, FrameResult, VoPipeline
from smfvo.synthetic import render_textured_frame


class TestIntegrateTwist:
    def test_zero_twist(self):
        rng = np.random.default_rng(0)
        pose = Pose(so3_exp(rng.uniform(-1, 1, 3)), rng.uniform(-2, 2, 3), 1.0)
        out = integrate_twist(pose, Twist.zero())
        assert np.array_equal(out.R, pose.R)
        assert np.array_equal(out.t, pose.t)

    def test_quarter_yaw(self):
        s = Twist(np.array([0.0, 0.0, np.pi / 2]), np.zeros(3))
        out = integrate_twist(Pose(), s)
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.allclose(out.R, expected, atol=1e-12)
        assert np.allclose(out.t, 0.0)

    def test_two_path_consistency(self):
        # a static world point maps identically through the twist map and
        # through the composed pose
        rng = np.random.default_rng(1)
        for _ in range(20):
            pose = Pose(so3_exp(rng.uniform(-2, 2, 3)), rng.uniform(-3, 3, 3))
            s = Twist(rng.uniform(-0.4, 0.4, 3), rng.uniform(-1, 1, 3))
            X_w = rng.uniform(-5, 5, 3)
            X_prev = pose.world_to_camera(X_w)
            via_twist = so3_exp(s.omega).T @ (X_prev - s.v)
            via_pose = integrate_twist(pose, s).world_to_camera(X_w)
            assert np.max(np.abs(via_twist - via_pose)) < 1e-10

    def test_relative_twist_inverts(self):
        rng = np.random.default_rng(2)
        pose = Pose(so3_exp(rng.uniform(-1, 1, 3)), rng.uniform(-2, 2, 3))
        s = Twist(rng.uniform(-0.3, 0.3, 3), rng.uniform(-1, 1, 3))
        cur = integrate_twist(pose, s)
        back = relative_twist(pose, cur)
        assert np.allclose(back.as_vector(), s.as_vector(), atol=1e-12)

    def test_orthonormal_after_many_steps(self):
        rng = np.random.default_rng(3)
        pose = Pose()
        for _ in range(10_000):
            s = Twist(rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.1, 0.1, 3))
            pose = integrate_twist(pose, s)
        assert np.linalg.norm(pose.R.T @ pose.R - np.eye(3)) < 1e-9


class TestProcessFrame:
    def config(self, **kw):
        overrides = {
            "keyframe.min_inliers": 40,
            "tracking.target_features": 250,
            "tracking.grid_cell": 24,
        }
        overrides.update(kw)
        return PipelineConfig.from_dict(overrides)

    def test_static_camera_no_drift(self):
        scene = rendered_scene(pinhole_camera(), Twist.zero(), 1, seed=7)
        left = render_textured_frame(scene, 0, "left")
        right = render_textured_frame(scene, 0, "right")
        pipe = VoPipeline(scene.rig, self.config())
        for k in range(30):
            res = pipe.process_frame(left, right, 0.05 * k)
        assert np.linalg.norm(res.pose.t) < 1e-6
        assert len(pipe.trajectory) == 30

    def test_constant_twist_recovered(self, short_rendered_sequence):
        scene, frames = short_rendered_sequence
        pipe = VoPipeline(scene.rig, self.config())
        errors = []
        for k, (ts, left, right) in enumerate(frames):
            res = pipe.process_frame(left, right, ts)
            if k >= 2:
                truth = scene.frame_twist(k).as_vector()
                err = np.linalg.norm(res.twist.as_vector() - truth)
                errors.append(err / np.linalg.norm(truth))
        assert np.median(errors) < 0.01
        # trajectory endpoint stays near the ground truth
        t_err = np.linalg.norm(pipe.trajectory.poses[-1].t - scene.trajectory[-1].t)
        path = sum(
            np.linalg.norm(b.t - a.t)
            for a, b in zip(scene.trajectory, scene.trajectory[1:])
        )
        assert t_err < 0.05 * path

    def test_featureless_frames_fall_back(self):
        rig = stereo_rig(pinhole_camera())
        flat = np.full((384, 512), 127, dtype=np.uint8)
        pipe = VoPipeline(rig, self.config())
        pipe.last_twist = Twist(np.zeros(3), np.array([0.0, 0.0, 0.01]))
        r0 = pipe.process_frame(flat, flat, 0.0)
        r1 = pipe.process_frame(flat, flat, 0.05)
        assert not r0.fallback  # bootstrap frame estimates nothing
        assert r1.fallback
        assert np.allclose(r1.twist.v, [0.0, 0.0, 0.01])
        assert r1.inlier_count == 0

    def test_image_size_mismatch(self):
        rig = stereo_rig(pinhole_camera())
        pipe = VoPipeline(rig, self.config())
        bad = np.zeros((100, 100), dtype=np.uint8)
        with pytest.raises(ImageSizeMismatch):
            pipe.process_frame(bad, bad, 0.0)

    def test_non_monotonic_timestamp(self):
        scene = rendered_scene(pinhole_camera(), Twist.zero(), 1, seed=8)
        img = render_textured_frame(scene, 0, "left")
        imgr = render_textured_frame(scene, 0, "right")
        pipe = VoPipeline(scene.rig, self.config())
        pipe.process_frame(img, imgr, 1.0)
        with pytest.raises(NonMonotonicTimestamp):
            pipe.process_frame(img, imgr, 1.0)

    @pytest.mark.parametrize("mode", ["ray", "pixel"])
    @pytest.mark.parametrize("optimize", [True, False])
    def test_mode_toggles_same_schema(self, short_rendered_sequence, mode, optimize):
        scene, frames = short_rendered_sequence
        cfg = self.config(**{"pipeline.mode": mode, "pipeline.optimize": optimize})
        pipe = VoPipeline(scene.rig, cfg)
        for ts, left, right in frames[:6]:
            res = pipe.process_frame(left, right, ts)
        assert isinstance(res, FrameResult)
        row = res.stats_row()
        assert len(row.split(",")) == len(STATS_HEADER.split(","))
        assert set(res.timings) == {
            "track_us", "depth_us", "ransac_us", "opt_us", "total_us",
        }

    def test_keyframes_are_flagged(self, short_rendered_sequence):
        scene, frames = short_rendered_sequence
        cfg = self.config(**{"keyframe.max_elapsed": 5})
        pipe = VoPipeline(scene.rig, cfg)
        flags = [
            pipe.process_frame(left, right, ts).is_keyframe
            for ts, left, right in frames[:14]
        ]
        assert flags[0] is True  # bootstrap keyframe
        assert sum(flags) >= 3

    def test_timings_nonnegative_and_total_dominates(self, short_rendered_sequence):
        scene, frames = short_rendered_sequence
        pipe = VoPipeline(scene.rig, self.config())
        ts, left, right = frames[0]
        res = pipe.process_frame(left, right, ts)
        t = res.timings
        assert all(v >= 0 for v in t.values())
        assert t["total_us"] >= t["track_us"] + t["depth_us"] + t["ransac_us"]
        assert res.inlier_count <= res.feature_count or res.feature_count == 0
