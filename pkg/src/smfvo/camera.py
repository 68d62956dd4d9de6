"""Camera models mapping pixels to 3D unit rays and back.

Three projection models are supported: ideal pinhole, pinhole with
radial-tangential distortion (k1, k2, p1, p2), and equidistant fisheye
(Kannala-Brandt, k1..k4). All functions accept single points (shape (2,)
or (3,)) or batches ((n, 2) / (n, 3)) and return matching shapes.

Conventions: +X right, +Y down, +Z forward (optical axis). Pixel (u, v)
with u along +X. Rays are unit-norm vectors in the camera frame.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, PointBehindCamera

# validity limit for the equidistant model (angle from the optical axis)
EQUIDISTANT_MAX_THETA = 2.0  # rad, ~115 deg half-angle
# fixed-point distortion inversion controls; after the iteration cap a
# result is still accepted while it can honor the 1e-6 px round-trip
# contract, and rejected beyond INVERT_FAIL_PX
INVERT_MAX_ITERS = 20
INVERT_TOL_PX = 1e-8
INVERT_FAIL_PX = 1e-7


class CameraModel(enum.Enum):
    PINHOLE = "pinhole"
    PINHOLE_RADTAN = "pinhole_radtan"
    EQUIDISTANT_FISHEYE = "equidistant"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Projection parameters of a single camera."""

    model: CameraModel
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    dist: tuple[float, ...] = ()

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if len(self.dist) > 4:
            raise ValueError("at most 4 distortion coefficients supported")
        object.__setattr__(self, "dist", tuple(float(k) for k in self.dist))

    @property
    def focal(self) -> float:
        """Scalar focal length used by the pixel-plane motion formulation."""
        return 0.5 * (self.fx + self.fy)

    def dist4(self) -> np.ndarray:
        k = np.zeros(4)
        k[: len(self.dist)] = self.dist
        return k


@dataclass(frozen=True)
class StereoRig:
    """Calibrated stereo pair; T_rl maps left-frame points into the right frame."""

    left: CameraIntrinsics
    right: CameraIntrinsics
    R_rl: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_rl: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R_rl", np.asarray(self.R_rl, dtype=np.float64))
        object.__setattr__(self, "t_rl", np.asarray(self.t_rl, dtype=np.float64))
        if np.linalg.norm(self.t_rl) <= 0:
            raise ValueError("stereo baseline must be non-zero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.t_rl))

    def left_to_right(self, X_l: np.ndarray) -> np.ndarray:
        return np.asarray(X_l) @ self.R_rl.T + self.t_rl

    def right_center_in_left(self) -> np.ndarray:
        """Optical center of the right camera expressed in the left frame."""
        return -self.R_rl.T @ self.t_rl


def _radtan_distort(xy: np.ndarray, k: np.ndarray) -> np.ndarray:
    k1, k2, p1, p2 = k
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + k2 * r2)
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _theta_poly(theta: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Distorted angle theta_d of the equidistant polynomial."""
    t2 = theta * theta
    return theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))))


def project(P: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame 3D points to pixel coordinates.

    Raises PointBehindCamera when the projection is undefined for the
    model (Z <= 0 for pinhole variants, off-axis angle beyond the
    equidistant validity limit).
    """
    P = np.asarray(P, dtype=np.float64)
    single = P.ndim == 1
    P = np.atleast_2d(P)

    if K.model in (CameraModel.PINHOLE, CameraModel.PINHOLE_RADTAN):
        Z = P[:, 2]
        if np.any(Z <= 0):
            raise PointBehindCamera("point has non-positive depth")
        xy = P[:, :2] / Z[:, None]
        if K.model is CameraModel.PINHOLE_RADTAN:
            xy = _radtan_distort(xy, K.dist4())
        px = np.stack(
            [K.fx * xy[:, 0] + K.cx, K.fy * xy[:, 1] + K.cy], axis=-1
        )
    else:
        rho = np.linalg.norm(P[:, :2], axis=-1)
        theta = np.arctan2(rho, P[:, 2])
        if np.any(theta >= EQUIDISTANT_MAX_THETA):
            raise PointBehindCamera("point outside equidistant field of view")
        theta_d = _theta_poly(theta, K.dist4())
        scale = np.where(rho > 0, theta_d / np.maximum(rho, 1e-300), 0.0)
        px = np.stack(
            [K.fx * scale * P[:, 0] + K.cx, K.fy * scale * P[:, 1] + K.cy],
            axis=-1,
        )
    return px[0] if single else px


def unproject(px: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixels to unit rays, inverting distortion iteratively.

    Raises NoConvergence if the fixed-point inversion has not reached
    INVERT_TOL_PX after INVERT_MAX_ITERS iterations for any point.
    """
    px = np.asarray(px, dtype=np.float64)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    m = np.stack([(px[:, 0] - K.cx) / K.fx, (px[:, 1] - K.cy) / K.fy], axis=-1)

    if K.model is CameraModel.PINHOLE:
        rays = np.concatenate([m, np.ones((len(m), 1))], axis=-1)
    elif K.model is CameraModel.PINHOLE_RADTAN:
        xy = _invert_radtan(m, K)
        rays = np.concatenate([xy, np.ones((len(xy), 1))], axis=-1)
    else:
        theta_d = np.linalg.norm(m, axis=-1)
        theta = _invert_theta_poly(theta_d, K)
        sin_t = np.sin(theta)
        dir_xy = np.where(
            theta_d[:, None] > 0, m / np.maximum(theta_d, 1e-300)[:, None], 0.0
        )
        rays = np.concatenate([sin_t[:, None] * dir_xy, np.cos(theta)[:, None]], axis=-1)

    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    return rays[0] if single else rays


def _invert_radtan(m: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Damped fixed-point undistortion of normalized radtan coordinates.

    Iterates x <- x + alpha * ((m - tangential(x)) / radial(x) - x); the
    damping alpha halves wherever the distortion residual grows.
    """
    k1, k2, p1, p2 = K.dist4()
    if not (k1 or k2 or p1 or p2):
        return m
    f = max(K.fx, K.fy)
    tol = INVERT_TOL_PX / f
    xy = m.copy()
    step = np.full(len(m), np.inf)
    alpha = np.ones(len(m))
    with np.errstate(all="ignore"):
        for _ in range(INVERT_MAX_ITERS):
            err = _radtan_distort(xy, K.dist4()) - m
            new_step = np.linalg.norm(err, axis=-1)
            new_step = np.where(np.isfinite(new_step), new_step, np.inf)
            if np.all(new_step < tol):
                return xy
            alpha = np.where(new_step > step, alpha * 0.5, alpha)
            step = new_step
            x, y = xy[..., 0], xy[..., 1]
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + k2 * r2)
            tx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            ty = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            target = np.stack(
                [(m[..., 0] - tx) / radial, (m[..., 1] - ty) / radial], axis=-1
            )
            xy = xy + alpha[:, None] * (target - xy)
        err = np.linalg.norm(_radtan_distort(xy, K.dist4()) - m, axis=-1)
    if np.all(err * f < INVERT_FAIL_PX):
        return xy
    raise NoConvergence("radial-tangential inversion did not converge")


def _invert_theta_poly(theta_d: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Damped fixed-point solve of theta from the equidistant polynomial."""
    k = K.dist4()
    if not np.any(k):
        return theta_d
    f = max(K.fx, K.fy)
    tol = INVERT_TOL_PX / f
    theta = theta_d.copy()
    step = np.full(len(theta_d), np.inf)
    alpha = np.ones(len(theta_d))
    with np.errstate(all="ignore"):
        for _ in range(INVERT_MAX_ITERS):
            err = _theta_poly(theta, k) - theta_d
            new_step = np.abs(err)
            new_step = np.where(np.isfinite(new_step), new_step, np.inf)
            if np.all(new_step < tol):
                return theta
            alpha = np.where(new_step > step, alpha * 0.5, alpha)
            step = new_step
            theta = theta - alpha * err
        err = np.abs(_theta_poly(theta, k) - theta_d)
    if np.all(err * f < INVERT_FAIL_PX):
        return theta
    raise NoConvergence("equidistant angle inversion did not converge")


def project_masked(P: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Batch projection that flags invalid points instead of raising.

    Returns (pixels, valid); pixels of invalid points are zeros.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    n = len(P)
    px = np.zeros((n, 2))
    if K.model in (CameraModel.PINHOLE, CameraModel.PINHOLE_RADTAN):
        valid = P[:, 2] > 1e-12
    else:
        rho = np.linalg.norm(P[:, :2], axis=-1)
        valid = np.arctan2(rho, P[:, 2]) < EQUIDISTANT_MAX_THETA
        valid &= np.linalg.norm(P, axis=-1) > 1e-12
    if np.any(valid):
        px[valid] = project(P[valid], K)
    return px, valid


def pixel_in_bounds(px: np.ndarray, K: CameraIntrinsics, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of pixels at least `margin` inside the image rectangle."""
    px = np.atleast_2d(np.asarray(px))
    return (
        (px[:, 0] >= margin)
        & (px[:, 0] <= K.width - 1 - margin)
        & (px[:, 1] >= margin)
        & (px[:, 1] <= K.height - 1 - margin)
    )
