"""Rotation and rigid-pose helpers used throughout the pipeline.

Rotations are 3x3 orthonormal matrices, rotation vectors are axis*angle
(radians). Poses are camera-to-world unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix [w]x such that skew(w) @ x == cross(w, x)."""
    w = np.asarray(w, dtype=np.float64)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix of the rotation vector w."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        # second-order Taylor keeps orthonormality to machine precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of an orthonormal matrix (angle in [0, pi])."""
    R = np.asarray(R, dtype=np.float64)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-8:
        # first order: vee of the antisymmetric part
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if theta > np.pi - 1e-6:
        # near pi the antisymmetric part degenerates; use the symmetric part
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from the largest off-diagonal products
        k = int(np.argmax(axis))
        axis = A[:, k] / axis[k]
        axis /= np.linalg.norm(axis)
        return axis * theta
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return vee * (theta / (2.0 * np.sin(theta)))


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle in radians of an orthonormal matrix."""
    cos_theta = np.clip((np.trace(np.asarray(R)) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.arccos(cos_theta))


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Quaternion (x, y, z, w), w >= 0, from an orthonormal matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            x = 0.25 * s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
            w = (R[2, 1] - R[1, 2]) / s
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            x = (R[0, 1] + R[1, 0]) / s
            y = 0.25 * s
            z = (R[1, 2] + R[2, 1]) / s
            w = (R[0, 2] - R[2, 0]) / s
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
            z = 0.25 * s
            w = (R[1, 0] - R[0, 1]) / s
    q = np.array([x, y, z, w])
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Orthonormal matrix from a quaternion (x, y, z, w)."""
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass
class Pose:
    """Camera-to-world rigid transform with a timestamp in seconds."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy(), self.timestamp)

    def world_to_camera(self, X_w: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into this camera's frame."""
        X_w = np.asarray(X_w, dtype=np.float64)
        return (X_w - self.t) @ self.R

    def camera_to_world(self, X_c: np.ndarray) -> np.ndarray:
        """Map camera-frame points (..., 3) into the world frame."""
        X_c = np.asarray(X_c, dtype=np.float64)
        return X_c @ self.R.T + self.t

    def inverse_compose(self, other: "Pose") -> tuple[np.ndarray, np.ndarray]:
        """Relative transform (R_rel, t_rel) mapping `other`'s frame into this frame."""
        R_rel = self.R.T @ other.R
        t_rel = self.R.T @ (other.t - self.t)
        return R_rel, t_rel
