"""Per-frame odometry orchestration.

Each frame: track features from the previous left image, form motion
observations from the previous frame's stereo depths, estimate the twist
robustly, integrate the pose, triangulate fresh depths for the next
frame, replenish features, and run the keyframe policy plus optional
refinement. Stage timings are recorded per frame in microseconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .camera import StereoRig, unproject
from .config import PipelineConfig
from .errors import ImageSizeMismatch, InsufficientObservations, NonMonotonicTimestamp
from .geometry import Pose
from .keyframe import (
    KeyframeState,
    Landmark,
    optimize_keyframe,
    should_create_keyframe,
)
from .motion_field import (
    PixelObservations,
    RayObservations,
    Twist,
    integrate_twist,
)
from .ransac import ransac
from .tracking import ImagePyramid, TrackStatus, detect_features, stereo_depth, track_klt
from .trajectory import Trajectory

MIN_PIXEL_MODE_Z = 0.01  # m, optical-axis depth floor for the pixel path


@dataclass
class FrameResult:
    timestamp: float
    twist: Twist
    pose: Pose
    inlier_count: int
    feature_count: int
    timings: dict[str, int]
    is_keyframe: bool
    fallback: bool = False

    def stats_row(self) -> str:
        t = self.timings
        return (
            f"{self.timestamp:.9f},{t['track_us']},{t['depth_us']},"
            f"{t['ransac_us']},{t['opt_us']},{t['total_us']},"
            f"{self.feature_count},{self.inlier_count},{int(self.is_keyframe)}"
        )


STATS_HEADER = "timestamp,track_us,depth_us,ransac_us,opt_us,total_us,features,inliers,keyframe"


@dataclass
class _FeatureStore:
    """Live tracks: pixel position, unit ray and stereo depth per feature."""

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    px: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    rays: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    d: np.ndarray = field(default_factory=lambda: np.zeros(0))
    P: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    depth_ok: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return len(self.ids)


class VoPipeline:
    """Stateful frame-by-frame visual odometry over a calibrated stereo rig."""

    def __init__(self, rig: StereoRig, config: PipelineConfig | None = None):
        self.rig = rig
        self.config = config or PipelineConfig()
        self.pose = Pose()
        self.trajectory = Trajectory()
        self.last_twist = Twist.zero()
        self.frame_index = 0
        self._features = _FeatureStore()
        self._prev_pyr: ImagePyramid | None = None
        self._next_feature_id = 0
        self._replenished_to = np.inf  # pool size after the last detection
        self._last_ts: float | None = None
        # keyframe graph: poses and landmarks shared between keyframes
        self._keyframes: dict[int, KeyframeState] = {}
        self._landmarks: dict[int, Landmark] = {}
        self._next_kf_id = 0
        self._frames_since_kf = 0
        self._last_kf_pose: Pose | None = None

    # ------------------------------------------------------------------
    def process_frame(
        self, left_img: np.ndarray, right_img: np.ndarray, timestamp: float
    ) -> FrameResult:
        t_start = time.perf_counter_ns()
        self._check_inputs(left_img, right_img, timestamp)
        cfg = self.config
        timings = {k: 0 for k in ("track_us", "depth_us", "ransac_us", "opt_us")}

        cur_pyr = ImagePyramid.build(left_img, cfg.tracking)
        right_pyr = ImagePyramid.build(right_img, cfg.tracking)

        twist = Twist.zero()
        inlier_fids: np.ndarray = np.zeros(0, dtype=np.int64)
        fallback = False
        inlier_count = 0

        if self.frame_index == 0:
            self.pose = Pose(np.eye(3), np.zeros(3), timestamp)
        else:
            # track left(prev) -> left(cur)
            t0 = time.perf_counter_ns()
            tracks = track_klt(self._prev_pyr, cur_pyr, self._features.px, cfg.tracking)
            kept = np.array(
                [t.status is TrackStatus.TRACKED for t in tracks], dtype=bool
            )
            px_cur = np.array([t.px_cur for t in tracks]).reshape(-1, 2)
            timings["track_us"] += (time.perf_counter_ns() - t0) // 1000

            prev = self._features
            usable = kept & prev.depth_ok
            obs, obs_fids = self._build_observations(prev, px_cur, usable)

            t0 = time.perf_counter_ns()
            result = ransac(obs, cfg.ransac, seed=cfg.seed + self.frame_index)
            timings["ransac_us"] += (time.perf_counter_ns() - t0) // 1000

            if len(result.inliers) == 0:
                twist = self.last_twist
                fallback = True
            else:
                twist = result.twist
                inlier_fids = obs_fids[result.inliers]
            inlier_count = len(result.inliers)
            self.pose = integrate_twist(self.pose, twist, timestamp)
            self.last_twist = twist

            # carry surviving tracks forward
            self._features = _FeatureStore(
                ids=prev.ids[kept],
                px=px_cur[kept],
                rays=np.zeros((int(kept.sum()), 3)),
                d=np.zeros(int(kept.sum())),
                P=np.zeros((int(kept.sum()), 3)),
                depth_ok=np.zeros(int(kept.sum()), dtype=bool),
            )

        # replenish detections and refresh stereo depth for the next frame;
        # skipped while the pool holds near what the detector last achieved
        t0 = time.perf_counter_ns()
        new_px = np.zeros((0, 2))
        if len(self._features) < min(
            0.9 * self._replenished_to, 0.85 * cfg.tracking.target_features
        ):
            new_px = detect_features(
                cur_pyr.image,
                self._features.px,
                cfg.tracking.target_features,
                cfg.tracking.grid_cell,
                cfg.tracking.min_score,
            )
            self._replenished_to = max(len(self._features) + len(new_px), 1)
        timings["track_us"] += (time.perf_counter_ns() - t0) // 1000
        if len(new_px):
            new_ids = np.arange(
                self._next_feature_id, self._next_feature_id + len(new_px)
            )
            self._next_feature_id += len(new_px)
            self._features = _FeatureStore(
                ids=np.concatenate([self._features.ids, new_ids]),
                px=np.vstack([self._features.px, new_px]),
                rays=np.zeros((len(self._features) + len(new_px), 3)),
                d=np.zeros(len(self._features) + len(new_px)),
                P=np.zeros((len(self._features) + len(new_px), 3)),
                depth_ok=np.zeros(len(self._features) + len(new_px), dtype=bool),
            )

        t0 = time.perf_counter_ns()
        self._refresh_depths(cur_pyr, right_pyr)
        timings["depth_us"] += (time.perf_counter_ns() - t0) // 1000

        t0 = time.perf_counter_ns()
        is_keyframe = self._keyframe_step(inlier_count, inlier_fids)
        timings["opt_us"] += (time.perf_counter_ns() - t0) // 1000

        self.trajectory.append(self.pose.copy())
        self._prev_pyr = cur_pyr
        self.frame_index += 1
        self._last_ts = timestamp

        timings["total_us"] = (time.perf_counter_ns() - t_start) // 1000
        return FrameResult(
            timestamp=timestamp,
            twist=twist,
            pose=self.pose.copy(),
            inlier_count=inlier_count,
            feature_count=len(self._features),
            timings=timings,
            is_keyframe=is_keyframe,
            fallback=fallback,
        )

    # ------------------------------------------------------------------
    def _check_inputs(self, left, right, timestamp):
        for img, cam, name in (
            (left, self.rig.left, "left"),
            (right, self.rig.right, "right"),
        ):
            if img.shape[:2] != (cam.height, cam.width):
                raise ImageSizeMismatch(
                    f"{name} image is {img.shape[1]}x{img.shape[0]}, calibration "
                    f"expects {cam.width}x{cam.height}"
                )
        if self._last_ts is not None and timestamp <= self._last_ts:
            raise NonMonotonicTimestamp(
                f"timestamp {timestamp} after {self._last_ts}"
            )

    def _build_observations(self, prev, px_cur, usable):
        """Motion observations anchored at the previous frame."""
        fids = prev.ids[usable]
        cfg = self.config
        if cfg.mode == "ray":
            r_prev = prev.rays[usable]
            r_cur = unproject(px_cur[usable], self.rig.left)
            obs = RayObservations.from_rays(r_prev, r_cur, prev.d[usable])
            return obs, fids
        # pixel-plane path: raw pixel offsets with a nominal focal length,
        # optical-axis depth from the same triangulation
        K = self.rig.left
        f = K.focal
        Z = prev.P[usable][:, 2]
        front = Z > MIN_PIXEL_MODE_Z
        fids = fids[front]
        scale = np.array([f / K.fx, f / K.fy])
        c = np.array([K.cx, K.cy])
        p_prev = (prev.px[usable][front] - c) * scale
        p_cur = (px_cur[usable][front] - c) * scale
        obs = PixelObservations(p_prev, p_cur - p_prev, Z[front], f)
        return obs, fids

    def _refresh_depths(self, left_pyr, right_pyr):
        feats = self._features
        if len(feats) == 0:
            return
        rays = unproject(feats.px, self.rig.left)
        res = stereo_depth(
            self.rig, left_pyr, right_pyr, feats.px, self.config.tracking, rays_left=rays
        )
        feats.rays = rays
        feats.depth_ok = res.valid
        feats.d = np.where(res.valid, np.linalg.norm(res.P, axis=-1), 0.0)
        # anchor the landmark on the observed ray so P = d * r exactly
        feats.P = rays * feats.d[:, None]

    def _keyframe_step(self, inlier_count: int, inlier_fids: np.ndarray) -> bool:
        cfg = self.config
        self._frames_since_kf += 1
        if self._last_kf_pose is not None:
            R_rel, t_rel = self._last_kf_pose.inverse_compose(self.pose)
            if not should_create_keyframe(
                inlier_count, self._frames_since_kf, R_rel, t_rel, cfg.policy
            ):
                return False

        feats = self._features
        in_kf = np.isin(feats.ids, inlier_fids) & feats.depth_ok
        if self._last_kf_pose is None:
            in_kf = feats.depth_ok.copy()  # bootstrap keyframe sees everything
        kf_id = self._next_kf_id
        self._next_kf_id += 1
        observations = {}
        for i in np.flatnonzero(in_kf):
            fid = int(feats.ids[i])
            observations[fid] = feats.rays[i].copy()
            if fid in self._landmarks:
                self._landmarks[fid].observers.add(kf_id)
            else:
                world = self.pose.camera_to_world(feats.P[i])
                self._landmarks[fid] = Landmark(fid, world, {kf_id})
        kf = KeyframeState(kf_id, self.pose.copy(), observations)

        if cfg.optimize and self._keyframes:
            shared = {
                k
                for fid in observations
                if fid in self._landmarks
                for k in self._landmarks[fid].observers
                if k != kf_id
            }
            fixed = [self._keyframes[k] for k in sorted(shared) if k in self._keyframes]
            for f in fixed:
                f.fixed = True
            try:
                new_pose, refined, _ = optimize_keyframe(
                    kf, fixed, self._landmarks, cfg.optimizer
                )
                kf.pose = new_pose
                self.pose = Pose(new_pose.R, new_pose.t, self.pose.timestamp)
                for fid, p in refined.items():
                    self._landmarks[fid].position = p
            except InsufficientObservations:
                pass

        self._keyframes[kf_id] = kf
        self._prune_keyframes(kf_id)
        self._last_kf_pose = self.pose.copy()
        self._frames_since_kf = 0
        return True

    def _prune_keyframes(self, active_id: int):
        """Bound the graph: drop dead landmarks and unreferenced keyframes."""
        live_fids = set(int(i) for i in self._features.ids)
        self._landmarks = {
            fid: lm for fid, lm in self._landmarks.items() if fid in live_fids
        }
        referenced = {k for lm in self._landmarks.values() for k in lm.observers}
        referenced.add(active_id)
        keep = sorted(referenced)[-self.config.max_keyframes :]
        self._keyframes = {
            k: kf for k, kf in self._keyframes.items() if k in keep
        }
        for lm in self._landmarks.values():
            lm.observers &= set(keep)


def run_sequence(reader, config: PipelineConfig | None = None, prefetch: bool = True):
    """Process a whole dataset; yields FrameResult per frame."""
    pipeline = VoPipeline(reader.rig, config)
    for frame in reader.frames(prefetch=prefetch):
        yield pipeline.process_frame(frame.left, frame.right, frame.timestamp)
