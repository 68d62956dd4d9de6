"""Robust twist estimation: RANSAC over motion-field observations.

Hypotheses are solved from minimal samples of the linear motion system
and scored by a dual inlier test: a finite-motion prediction angle gate
and a linearized flow-residual gate. The iteration bound adapts to the
best consensus found so far and the loop exits early once the inlier
ratio clears gamma0. A final refit over the consensus set replaces the
minimal-sample twist unless it loses inliers.

Works on both ray and pixel observation batches; thresholds translate
the angular gate tau_pi into flow units per formulation (chord length
2*sin(tau_pi/2) on the unit sphere, f*tan(tau_pi) on the pixel plane).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSystem
from .geometry import so3_exp
from .motion_field import (
    PixelObservations,
    RayObservations,
    Twist,
    predict_pixel_flow,
    predict_ray_flow,
    solve_twist_pixel,
    solve_twist_ray,
)


@dataclass(frozen=True)
class RansacParams:
    success_prob: float = 0.9999  # Q
    sample_size: int = 3  # n_s
    max_iterations: int = 100  # N_max
    gamma0: float = 0.9  # early-termination inlier ratio
    tau_pi: float = math.radians(1.0)  # angular reprojection threshold
    tau_theta: float = math.radians(1.0)  # prediction-angle threshold
    textbook_adaptation: bool = False  # use log(1 - w^n_s) instead of log(1 - w)

    def __post_init__(self):
        if not 0.0 < self.success_prob < 1.0:
            raise ValueError("success probability must be in (0, 1)")
        if self.sample_size < 3:
            raise ValueError("sample size must be at least 3")
        if not 0.0 < self.gamma0 <= 1.0:
            raise ValueError("gamma0 must be in (0, 1]")

    def tau_u_ray(self) -> float:
        """Flow-residual threshold on the unit sphere (chord length)."""
        return 2.0 * math.sin(self.tau_pi / 2.0)

    def tau_u_pixel(self, f: float) -> float:
        """Flow-residual threshold on the pixel plane."""
        return f * math.tan(self.tau_pi)


@dataclass
class RansacResult:
    twist: Twist
    inliers: np.ndarray  # sorted unique indices into the input batch
    iterations: int
    residual_rms: float

    def inlier_ratio(self, n: int) -> float:
        return len(self.inliers) / n if n else 0.0


def inlier_test(obs, s: Twist, params: RansacParams) -> np.ndarray:
    """Boolean mask of observations passing BOTH inlier gates under s.

    Gate 1 compares the observed moved direction against the finite
    motion prediction Exp(omega)^T (P - v); gate 2 bounds the linearized
    flow residual. Both comparisons are strict.
    """
    R = so3_exp(s.omega)
    if isinstance(obs, RayObservations):
        pred = (obs.P - s.v) @ R  # row-wise Exp(omega)^T (P - v)
        moved = obs.r + obs.rdot
        ang = _angle_between(moved, pred)
        res = np.linalg.norm(
            obs.rdot - predict_ray_flow(obs.r, obs.d, s), axis=-1
        )
        return (ang < params.tau_theta) & (res < params.tau_u_ray())
    if isinstance(obs, PixelObservations):
        pred = (obs.landmarks() - s.v) @ R
        ok = pred[:, 2] > 1e-9
        with np.errstate(invalid="ignore", divide="ignore"):
            proj = obs.f * pred[:, :2] / pred[:, 2:]
            reproj = np.linalg.norm(obs.p + obs.u - proj, axis=-1)
        res = np.linalg.norm(obs.u - predict_pixel_flow(obs, s), axis=-1)
        tau_rep = obs.f * math.tan(params.tau_theta)
        return ok & (reproj < tau_rep) & (res < params.tau_u_pixel(obs.f))
    raise TypeError(f"unsupported observation batch {type(obs)!r}")


def _angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def _solve(obs) -> tuple[Twist, float]:
    if isinstance(obs, RayObservations):
        return solve_twist_ray(obs)
    return solve_twist_pixel(obs)


def estimate(obs, indices, params: RansacParams) -> tuple[Twist, np.ndarray]:
    """Solve the motion system on a subset, then classify all observations.

    Returns the twist and the indices of observations passing the inlier
    test. Propagates DegenerateSystem for unusable subsets.
    """
    s, _ = _solve(obs.subset(indices))
    mask = inlier_test(obs, s, params)
    return s, np.flatnonzero(mask)


def adaptive_iterations(
    inlier_ratio: float, params: RansacParams, current: int | None = None
) -> int:
    """Iteration bound ceil(log(1-Q)/log(1-w)), clamped to never increase."""
    current = params.max_iterations if current is None else current
    if inlier_ratio <= 0.0:
        return current
    w = inlier_ratio
    if params.textbook_adaptation:
        w = inlier_ratio**params.sample_size
    if w >= 1.0:
        return 1
    needed = math.ceil(math.log(1.0 - params.success_prob) / math.log(1.0 - w))
    return min(max(needed, 1), current)


def ransac(obs, params: RansacParams, seed: int = 0) -> RansacResult:
    """Robust twist from an observation batch (ray or pixel).

    Deterministic for a given seed. Returns a zero twist and empty inlier
    set when fewer than sample_size observations are available.
    """
    n = len(obs)
    if n < params.sample_size:
        return RansacResult(Twist.zero(), np.empty(0, dtype=np.int64), 0, 0.0)

    rng = np.random.default_rng(seed)
    bound = params.max_iterations
    best_s = Twist.zero()
    best_inl = np.empty(0, dtype=np.int64)
    it = 0
    while it < bound:
        it += 1
        idx = rng.choice(n, size=params.sample_size, replace=False)
        try:
            s, inl = estimate(obs, idx, params)
        except (DegenerateSystem, ValueError):
            # unusable hypothesis: ill-conditioned sample or a solution
            # outside the valid twist range (rotation beyond pi)
            continue
        if len(inl) > len(best_inl):
            best_s, best_inl = s, inl
            if len(best_inl) / n > params.gamma0:
                break
            bound = adaptive_iterations(len(best_inl) / n, params, bound)

    if len(best_inl) > params.sample_size:
        try:
            s, inl = estimate(obs, best_inl, params)
            # keep the consensus refit unless it loses inliers
            if len(inl) >= len(best_inl):
                best_s, best_inl = s, inl
        except (DegenerateSystem, ValueError):
            pass

    rms = 0.0
    if len(best_inl):
        sub = obs.subset(best_inl)
        if isinstance(obs, RayObservations):
            res = sub.rdot - predict_ray_flow(sub.r, sub.d, best_s)
        else:
            res = sub.u - predict_pixel_flow(sub, best_s)
        rms = float(np.sqrt(np.mean(np.sum(res * res, axis=-1))))
    return RansacResult(best_s, best_inl, it, rms)
