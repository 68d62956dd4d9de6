"""Synthetic scenes with exact geometry for verifying every estimator.

A scene holds a world point cloud, a camera trajectory (optionally
generated from a constant twist) and, for image-based tests, a textured
axis-aligned box around the trajectory that renders deterministically
through any supported camera model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, CameraModel, StereoRig, pixel_in_bounds, project, unproject
from .errors import PointBehindCamera
from .geometry import Pose
from .motion_field import RayObservations, Twist, integrate_twist, predict_ray_flow, relative_twist

VISIBILITY_MARGIN = 12.0  # px kept from the border for reported observations
MIN_DEPTH = 0.05  # m, points closer than this are treated as not visible


@dataclass
class SpectralTexture:
    """Band-limited procedural 3D texture: a seeded sum of cosine waves.

    Smooth with non-vanishing gradient almost everywhere, which keeps
    differential tracking well-conditioned at any viewing scale.
    """

    seed: int = 0
    n_waves: int = 16
    min_freq: float = 1.5  # cycles per meter
    max_freq: float = 12.0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        dirs = rng.normal(size=(self.n_waves, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        freq = np.exp(
            rng.uniform(np.log(self.min_freq), np.log(self.max_freq), self.n_waves)
        )
        self._k = (dirs * (2.0 * np.pi * freq[:, None])).astype(np.float32)
        self._phase = rng.uniform(0.0, 2.0 * np.pi, self.n_waves).astype(np.float32)
        amp = 1.0 / np.sqrt(freq)
        self._amp = (amp / np.sum(amp) * 0.5).astype(np.float32)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Texture values in [0, 1] at world points (..., 3).

        Evaluated in float32: full-image shading dominates the synthetic
        dataset cost and single precision is ample for 8-bit output.
        """
        pts = np.asarray(points, dtype=np.float32)
        phases = pts @ self._k.T
        phases += self._phase
        np.cos(phases, out=phases)
        return 0.5 + phases @ self._amp


@dataclass
class SyntheticScene:
    """World geometry, camera trajectory and rendering configuration."""

    camera: CameraIntrinsics
    trajectory: list[Pose]
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    rig: StereoRig | None = None
    texture: SpectralTexture | None = None
    box_half: float = 8.0  # half-extent of the textured box around the origin

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self._ray_cache: dict[str, np.ndarray] = {}

    @property
    def n_frames(self) -> int:
        return len(self.trajectory)

    def frame_twist(self, frame_index: int) -> Twist:
        """Generating twist between frames (frame_index - 1, frame_index)."""
        if frame_index < 1:
            raise ValueError("frame twists start at frame 1")
        return relative_twist(
            self.trajectory[frame_index - 1], self.trajectory[frame_index]
        )

    def camera_pose(self, frame_index: int, which: str = "left") -> Pose:
        """World pose of the left or right camera at a frame."""
        pose = self.trajectory[frame_index]
        if which == "left" or self.rig is None:
            return pose
        R_lr = self.rig.R_rl.T
        c_r = self.rig.right_center_in_left()
        return Pose(pose.R @ R_lr, pose.t + pose.R @ c_r, pose.timestamp)


def constant_twist_scene(
    camera: CameraIntrinsics,
    twist: Twist,
    n_frames: int,
    n_points: int = 200,
    seed: int = 0,
    depth_range: tuple[float, float] = (0.5, 20.0),
    rig: StereoRig | None = None,
    texture: SpectralTexture | None = None,
    box_half: float = 8.0,
    frame_dt: float = 0.05,
) -> SyntheticScene:
    """Scene whose trajectory integrates a constant per-frame twist.

    Points are sampled inside the first frame's field of view between the
    given depths, then expressed in world coordinates.
    """
    trajectory = [Pose(timestamp=0.0)]
    for k in range(1, n_frames):
        trajectory.append(integrate_twist(trajectory[-1], twist, timestamp=k * frame_dt))

    rng = np.random.default_rng(seed)
    px = np.stack(
        [
            rng.uniform(VISIBILITY_MARGIN, camera.width - 1 - VISIBILITY_MARGIN, n_points),
            rng.uniform(VISIBILITY_MARGIN, camera.height - 1 - VISIBILITY_MARGIN, n_points),
        ],
        axis=-1,
    )
    rays = unproject(px, camera)
    depth = rng.uniform(depth_range[0], depth_range[1], n_points)
    pts_cam = rays * depth[:, None]
    points = trajectory[0].camera_to_world(pts_cam)
    return SyntheticScene(camera, trajectory, points, rig, texture, box_half)


def _visible_mask(P_cam: np.ndarray, camera: CameraIntrinsics) -> np.ndarray:
    """Points that project inside the image with a safe margin."""
    n = len(P_cam)
    mask = np.zeros(n, dtype=bool)
    if camera.model is CameraModel.EQUIDISTANT_FISHEYE:
        candidates = np.linalg.norm(P_cam, axis=-1) > MIN_DEPTH
    else:
        candidates = P_cam[:, 2] > MIN_DEPTH
    if not np.any(candidates):
        return mask
    try:
        px = project(P_cam[candidates], camera)
    except PointBehindCamera:
        # fall back to per-point projection when some are out of the model range
        px = np.full((int(np.sum(candidates)), 2), -1.0)
        for i, P in enumerate(P_cam[candidates]):
            try:
                px[i] = project(P, camera)
            except PointBehindCamera:
                pass
    mask[candidates] = pixel_in_bounds(px, camera, margin=VISIBILITY_MARGIN)
    return mask


def exact_observations(
    scene: SyntheticScene, frame_index: int, mode: str = "instantaneous"
) -> RayObservations:
    """Noise-free ray observations anchored at frame_index - 1.

    `instantaneous` evaluates the linear motion-field flow analytically;
    `finite` differences the exact rays of the two consecutive frames.
    Points not visible in both frames are excluded.
    """
    if mode not in ("instantaneous", "finite"):
        raise ValueError(f"unknown mode {mode!r}")
    if frame_index < 1 or frame_index >= scene.n_frames:
        raise ValueError("frame_index must address a frame with a predecessor")

    prev = scene.trajectory[frame_index - 1]
    cur = scene.trajectory[frame_index]
    P_prev = prev.world_to_camera(scene.points)
    P_cur = cur.world_to_camera(scene.points)
    visible = _visible_mask(P_prev, scene.camera) & _visible_mask(P_cur, scene.camera)

    P = P_prev[visible]
    d = np.linalg.norm(P, axis=-1)
    r = P / d[:, None]
    if mode == "instantaneous":
        rdot = predict_ray_flow(r, d, scene.frame_twist(frame_index))
    else:
        Pc = P_cur[visible]
        r_cur = Pc / np.linalg.norm(Pc, axis=-1, keepdims=True)
        rdot = r_cur - r
    return RayObservations(r, rdot, d, P)


def _pixel_rays(scene: SyntheticScene, which: str) -> np.ndarray:
    """Cached unit rays of every pixel center, shape (h*w, 3)."""
    if which not in scene._ray_cache:
        cam = scene.camera if which == "left" or scene.rig is None else scene.rig.right
        u, v = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        px = np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.float64)
        scene._ray_cache[which] = unproject(px, cam)
    return scene._ray_cache[which]


def render_textured_frame(
    scene: SyntheticScene, frame_index: int, which: str = "left"
) -> np.ndarray:
    """Deterministic grayscale view of the textured box, dtype uint8.

    Every pixel ray is cast from inside the box and shaded with the
    scene texture at its exit point.
    """
    if scene.texture is None:
        raise ValueError("scene has no texture attached")
    cam = scene.camera if which == "left" or scene.rig is None else scene.rig.right
    pose = scene.camera_pose(frame_index, which)
    if np.any(np.abs(pose.t) >= scene.box_half):
        raise ValueError("camera left the textured box")

    rays = (_pixel_rays(scene, which) @ pose.R.T).astype(np.float32)
    origin = pose.t.astype(np.float32)
    # exit distance of each ray from an interior point of the axis box;
    # axis-parallel rays never cross the two planes of that axis
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = np.where(rays > 0, scene.box_half, -scene.box_half).astype(np.float32)
        t_planes = (bounds - origin) / rays
    t_planes = np.where(rays == 0.0, np.float32(np.inf), t_planes)
    t_exit = np.min(t_planes, axis=-1)
    hits = origin + rays * t_exit[:, None]
    values = scene.texture.sample(hits)
    img = np.clip(values, 0.0, 1.0) * np.float32(255.0)
    return img.astype(np.uint8).reshape(cam.height, cam.width)
