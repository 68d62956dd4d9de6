"""Linear motion-field systems relating image flow to camera twist.

Two formulations are provided. The pixel-plane one models a point p =
f*(X/Z, Y/Z, 1) and its 2D velocity; the ray one models the unit viewing
ray r = P/||P|| and its 3D velocity (always tangent to the sphere). Both
are linear in the twist s = [omega, v], so n observations stack into an
overdetermined system solved by 6x6 normal equations.

All velocities are per-frame (the frame interval is absorbed into the
twist). Rays, flows and landmarks are anchored in the previous camera
frame; the recovered twist maps the previous frame into the current one
via X_cur = Exp(omega)^T (X_prev - v).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSystem
from .geometry import Pose, skew, so3_exp, so3_log

# conditioning of the 6x6 normal matrix: below COND_FAST use the direct
# solve, up to COND_LIMIT fall back to an orthogonal solve, beyond it the
# system is considered degenerate
COND_FAST = 1e8
COND_LIMIT = 1e12


@dataclass(frozen=True)
class Twist:
    """Instantaneous camera motion: angular and linear velocity per frame."""

    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        v = np.asarray(self.v, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(v))):
            raise ValueError("twist components must be finite")
        if np.linalg.norm(omega) >= np.pi:
            raise ValueError("per-frame rotation must stay below pi")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "v", v)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, s: np.ndarray) -> "Twist":
        s = np.asarray(s, dtype=np.float64).reshape(6)
        return cls(s[:3], s[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])

    def scaled(self, a: float) -> "Twist":
        return Twist(self.omega * a, self.v * a)


@dataclass
class PixelObservations:
    """Tracked points on the pixel plane, batched as arrays.

    p holds positions relative to the principal point (implicit third
    coordinate f), u the per-frame pixel velocities, Z the depth along
    the optical axis.
    """

    p: np.ndarray  # (n, 2)
    u: np.ndarray  # (n, 2)
    Z: np.ndarray  # (n,)
    f: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1, 2)
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1, 2)
        self.Z = np.asarray(self.Z, dtype=np.float64).reshape(-1)
        if not (len(self.p) == len(self.u) == len(self.Z)):
            raise ValueError("inconsistent observation counts")
        if np.any(self.Z <= 0):
            raise ValueError("depths must be positive")
        if self.f <= 0:
            raise ValueError("focal length must be positive")

    def __len__(self) -> int:
        return len(self.p)

    def subset(self, idx) -> "PixelObservations":
        return PixelObservations(self.p[idx], self.u[idx], self.Z[idx], self.f)

    def landmarks(self) -> np.ndarray:
        """3D points (Z/f) * (x, y, f) implied by position and depth."""
        s = self.Z / self.f
        return np.stack(
            [self.p[:, 0] * s, self.p[:, 1] * s, self.Z], axis=-1
        )


@dataclass
class RayObservations:
    """Tracked points as unit rays, batched as arrays.

    r are unit rays in the previous camera frame, rdot = r_cur - r_prev,
    d the Euclidean depth ||P||, P the landmark in the previous frame.
    """

    r: np.ndarray  # (n, 3)
    rdot: np.ndarray  # (n, 3)
    d: np.ndarray  # (n,)
    P: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64).reshape(-1, 3)
        self.rdot = np.asarray(self.rdot, dtype=np.float64).reshape(-1, 3)
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.P = np.asarray(self.P, dtype=np.float64).reshape(-1, 3)
        n = len(self.r)
        if not (len(self.rdot) == len(self.d) == len(self.P) == n):
            raise ValueError("inconsistent observation counts")
        if np.any(self.d <= 0):
            raise ValueError("depths must be positive")

    @classmethod
    def from_rays(cls, r_prev, r_cur, d) -> "RayObservations":
        """Build observations from matched unit rays and previous-frame depth."""
        r_prev = np.asarray(r_prev, dtype=np.float64).reshape(-1, 3)
        r_cur = np.asarray(r_cur, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(d, dtype=np.float64).reshape(-1)
        return cls(r_prev, r_cur - r_prev, d, r_prev * d[:, None])

    def __len__(self) -> int:
        return len(self.r)

    def subset(self, idx) -> "RayObservations":
        return RayObservations(self.r[idx], self.rdot[idx], self.d[idx], self.P[idx])


def pixel_jacobian(p: np.ndarray, f: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-point motion matrices (A, B) of the pixel-plane formulation.

    The stacked constraint row block of an observation is [A | B/Z]; A
    multiplies omega, B/Z multiplies v. Accepts a single position (2,)
    or a batch (n, 2); returns (2, 3)/(n, 2, 3) pairs.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    z = np.zeros_like(x)
    o = np.ones_like(x)
    A = np.stack(
        [
            np.stack([x * y / f, -f - x * x / f, y], axis=-1),
            np.stack([f + y * y / f, -x * y / f, -x], axis=-1),
        ],
        axis=-2,
    )
    B = np.stack(
        [
            np.stack([-f * o, z, x], axis=-1),
            np.stack([z, -f * o, y], axis=-1),
        ],
        axis=-2,
    )
    if single:
        return A[0], B[0]
    return A, B


def ray_block(r: np.ndarray, d: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray motion matrices (A_r, B_r) = ([r]x, (r r^T - I)/d).

    The 3x6 block [A_r | B_r] annihilates r on both sides and has rank
    exactly 2. Accepts a single ray (3,) or a batch (n, 3) with depths
    (n,).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 1:
        return skew(r), (np.outer(r, r) - np.eye(3)) / float(d)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 1, 1)
    n = len(r)
    A = np.zeros((n, 3, 3))
    A[:, 0, 1] = -r[:, 2]
    A[:, 0, 2] = r[:, 1]
    A[:, 1, 0] = r[:, 2]
    A[:, 1, 2] = -r[:, 0]
    A[:, 2, 0] = -r[:, 1]
    A[:, 2, 1] = r[:, 0]
    B = (r[:, :, None] * r[:, None, :] - np.eye(3)) / d
    return A, B


def predict_pixel_flow(obs: PixelObservations, s: Twist) -> np.ndarray:
    """Pixel velocities [A | B/Z] s implied by a twist, shape (n, 2)."""
    A, B = pixel_jacobian(obs.p, obs.f)
    return A @ s.omega + (B @ s.v) / obs.Z[:, None]


def predict_ray_flow(r: np.ndarray, d: np.ndarray, s: Twist) -> np.ndarray:
    """Ray velocities [r]x omega + (r r^T - I) v / d, tangent to each ray."""
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    rdot = np.cross(r, np.broadcast_to(s.omega, r.shape))
    rdot += (r * (r @ s.v)[:, None] - s.v) / d[:, None]
    return rdot[0] if single else rdot


def build_pixel_system(obs: PixelObservations) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (2n x 6) system W and flow vector for the pixel formulation."""
    A, B = pixel_jacobian(obs.p, obs.f)
    W = np.concatenate([A, B / obs.Z[:, None, None]], axis=-1)
    return W.reshape(-1, 6), obs.u.reshape(-1)


def build_ray_system(obs: RayObservations) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (3n x 6) system M and flow vector for the ray formulation."""
    A, B = ray_block(obs.r, obs.d)
    M = np.concatenate([A, B], axis=-1)
    return M.reshape(-1, 6), obs.rdot.reshape(-1)


def _solve_stacked(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least-squares twist of a stacked system via 6x6 normal equations.

    Falls back to an orthogonal (SVD) solve for ill-conditioned normal
    matrices and raises DegenerateSystem beyond COND_LIMIT.
    """
    N = W.T @ W
    g = W.T @ b
    ev = np.linalg.eigvalsh(N)  # N is symmetric PSD
    cond = np.inf if ev[-1] <= 0 or ev[0] <= 0 else ev[-1] / ev[0]
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateSystem(f"normal matrix condition {cond:.3g} exceeds limit")
    if cond < COND_FAST:
        return np.linalg.solve(N, g)
    return np.linalg.lstsq(W, b, rcond=None)[0]


def solve_twist_pixel(obs: PixelObservations) -> tuple[Twist, float]:
    """Least-squares twist from pixel observations, with residual RMS."""
    if len(obs) < 3:
        raise ValueError("at least 3 observations required")
    W, b = build_pixel_system(obs)
    s = _solve_stacked(W, b)
    res = W @ s - b
    return Twist.from_vector(s), float(np.sqrt(np.mean(res * res)))


def solve_twist_ray(obs: RayObservations) -> tuple[Twist, float]:
    """Least-squares twist from ray observations, with residual RMS."""
    if len(obs) < 3:
        raise ValueError("at least 3 observations required")
    M, b = build_ray_system(obs)
    s = _solve_stacked(M, b)
    res = M @ s - b
    return Twist.from_vector(s), float(np.sqrt(np.mean(res * res)))


def integrate_twist(prev: Pose, s: Twist, timestamp: float | None = None) -> Pose:
    """Compose a per-frame twist onto a camera-to-world pose.

    Consistent with the point map X_cur = Exp(omega)^T (X_prev - v): the
    new pose is R_prev * Exp(omega), t_prev + R_prev * v.
    """
    R = prev.R @ so3_exp(s.omega)
    t = prev.t + prev.R @ s.v
    return Pose(R, t, prev.timestamp if timestamp is None else timestamp)


def relative_twist(prev: Pose, cur: Pose) -> Twist:
    """Per-frame twist mapping the previous camera frame into the current one."""
    return Twist(so3_log(prev.R.T @ cur.R), prev.R.T @ (cur.t - prev.t))


def pinhole_ray_jacobian(r: np.ndarray, f: float) -> np.ndarray:
    """Jacobian of the pixel-plane point p = f*r/r_z with respect to the ray.

    Chains a ray velocity into the pixel velocity of the distortion-free
    pinhole model; shape (2, 3) or (n, 2, 3).
    """
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    z = r[:, 2]
    J = np.zeros((len(r), 2, 3))
    J[:, 0, 0] = f / z
    J[:, 0, 2] = -f * r[:, 0] / (z * z)
    J[:, 1, 1] = f / z
    J[:, 1, 2] = -f * r[:, 1] / (z * z)
    return J[0] if single else J
