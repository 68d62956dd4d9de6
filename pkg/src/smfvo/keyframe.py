"""Keyframe selection and the single-active-keyframe refinement.

A frame is promoted to a keyframe when tracking weakens or the motion
since the last keyframe grows. On promotion, the new pose and the
landmarks it observes are refined by minimizing Cauchy-robustified ray
reprojection errors against all keyframes observing those landmarks;
every other keyframe pose stays fixed, which keeps each refinement a
6 + 3L problem solved by damped Gauss-Newton with landmark elimination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientObservations
from .geometry import Pose, rotation_angle, skew, so3_exp


@dataclass(frozen=True)
class KeyframePolicy:
    min_inliers: int = 60  # promote when tracked inliers fall below
    max_elapsed: int = 30  # frames since the last keyframe
    rot_thresh: float = math.radians(10.0)
    trans_thresh: float = 0.5  # m, scene-scale dependent

    def __post_init__(self):
        if min(self.min_inliers, self.max_elapsed) <= 0:
            raise ValueError("policy thresholds must be positive")
        if min(self.rot_thresh, self.trans_thresh) <= 0:
            raise ValueError("policy thresholds must be positive")


@dataclass(frozen=True)
class OptimizerParams:
    cauchy_c: float = 0.01  # ray-difference units, about 0.57 deg
    max_iters: int = 10
    step_tol: float = 1e-10
    damping_init: float = 1e-6
    damping_scale: float = 10.0
    min_landmarks: int = 10

    def __post_init__(self):
        if self.cauchy_c <= 0:
            raise ValueError("cauchy scale must be positive")


@dataclass
class KeyframeState:
    id: int
    pose: Pose
    observations: dict[int, np.ndarray]  # landmark id -> observed unit ray
    fixed: bool = False


@dataclass
class Landmark:
    id: int
    position: np.ndarray  # world frame
    observers: set[int] = field(default_factory=set)  # keyframe ids
    inlier: bool = True


def should_create_keyframe(
    inlier_count: int,
    frames_elapsed: int,
    rel_rotation: np.ndarray,
    rel_translation: np.ndarray,
    policy: KeyframePolicy,
) -> bool:
    """True when tracking support or motion thresholds demand a keyframe."""
    return (
        inlier_count < policy.min_inliers
        or frames_elapsed > policy.max_elapsed
        or rotation_angle(rel_rotation) > policy.rot_thresh
        or float(np.linalg.norm(rel_translation)) > policy.trans_thresh
    )


def cauchy_loss(s, c: float):
    """Robust penalty c^2 log(1 + s/c^2) of a squared residual s.

    Returns (value, weight) where the weight is d(value)/ds, the factor
    applied to each term in iteratively reweighted least squares.
    """
    s = np.asarray(s, dtype=np.float64)
    c2 = c * c
    value = c2 * np.log1p(s / c2)
    weight = 1.0 / (1.0 + s / c2)
    if value.ndim == 0:
        return float(value), float(weight)
    return value, weight


def _ray_residuals(pose: Pose, rays: np.ndarray, points: np.ndarray):
    """Residuals r_obs - q/||q|| with q = R^T (P - t), plus q and ||q||."""
    q = (points - pose.t) @ pose.R
    n = np.linalg.norm(q, axis=-1)
    return rays - q / n[:, None], q, n


def robust_cost(
    active: KeyframeState,
    fixed_kfs: list[KeyframeState],
    landmarks: dict[int, Landmark],
    params: OptimizerParams,
    pose: Pose | None = None,
    positions: dict[int, np.ndarray] | None = None,
) -> float:
    """Total Cauchy cost of the active problem, at optionally moved state."""
    pose = pose or active.pose
    cost = 0.0
    active_ids = _active_landmark_ids(active, landmarks)
    for kf in [active] + fixed_kfs:
        ids = [l for l in active_ids if l in kf.observations]
        if not ids:
            continue
        rays = np.array([kf.observations[l] for l in ids])
        pts = np.array(
            [
                positions[l] if positions and l in positions else landmarks[l].position
                for l in ids
            ]
        )
        kf_pose = pose if kf.id == active.id else kf.pose
        e, _, _ = _ray_residuals(kf_pose, rays, pts)
        value, _ = cauchy_loss(np.sum(e * e, axis=-1), params.cauchy_c)
        cost += float(np.sum(value))
    return cost


def robust_cost_gradient(
    active: KeyframeState,
    fixed_kfs: list[KeyframeState],
    landmarks: dict[int, Landmark],
    params: OptimizerParams,
) -> tuple[float, np.ndarray, dict[int, np.ndarray]]:
    """Analytic (cost, pose gradient, landmark gradients).

    The pose gradient is with respect to a rotation-vector increment
    composed on the right of R and an additive translation increment,
    matching the optimizer's parameterization.
    """
    active_ids = _active_landmark_ids(active, landmarks)
    cost = 0.0
    g_pose = np.zeros(6)
    g_lm = {l: np.zeros(3) for l in active_ids}
    for kf in [active] + fixed_kfs:
        ids = [l for l in active_ids if l in kf.observations]
        for l in ids:
            e, q, n = _ray_residuals(
                kf.pose, kf.observations[l][None], landmarks[l].position[None]
            )
            e, q, n = e[0], q[0], n[0]
            s = float(e @ e)
            value, w = cauchy_loss(s, params.cauchy_c)
            cost += value
            dh_dq = (np.eye(3) - np.outer(q, q) / (n * n)) / n
            J_lm = -dh_dq @ kf.pose.R.T  # de/dP
            g_lm[l] += 2.0 * w * (J_lm.T @ e)
            if kf.id == active.id:
                J_pose = np.concatenate([-dh_dq @ skew(q), -J_lm], axis=1)
                g_pose += 2.0 * w * (J_pose.T @ e)
    return cost, g_pose, g_lm


def _active_landmark_ids(active: KeyframeState, landmarks: dict[int, Landmark]):
    return sorted(
        l for l in active.observations if l in landmarks and landmarks[l].inlier
    )


def optimize_keyframe(
    active: KeyframeState,
    fixed_kfs: list[KeyframeState],
    landmarks: dict[int, Landmark],
    params: OptimizerParams = OptimizerParams(),
) -> tuple[Pose, dict[int, np.ndarray], list[float]]:
    """Refine the active keyframe pose and its inlier landmarks.

    Damped Gauss-Newton on the robustified ray errors; landmarks are
    eliminated by a dense Schur reduction so each iteration solves one
    6x6 pose system. Returns the refined pose, the refined landmark
    positions and the accepted-cost trace (first entry is the initial
    cost). Other keyframe poses are never touched.
    """
    lm_ids = _active_landmark_ids(active, landmarks)
    if len(lm_ids) < params.min_landmarks:
        raise InsufficientObservations(
            f"active keyframe observes {len(lm_ids)} landmarks, "
            f"needs {params.min_landmarks}"
        )
    lm_index = {l: i for i, l in enumerate(lm_ids)}
    L = len(lm_ids)

    # gather (keyframe, ray, landmark index) residual terms once
    terms = []
    for kf in [active] + fixed_kfs:
        ids = [l for l in lm_ids if l in kf.observations]
        if ids:
            rays = np.array([kf.observations[l] for l in ids])
            terms.append((kf, rays, np.array([lm_index[l] for l in ids])))

    pose = active.pose.copy()
    positions = np.array([landmarks[l].position for l in lm_ids], dtype=np.float64)

    def total_cost(p: Pose, pos: np.ndarray) -> float:
        c = 0.0
        for kf, rays, li in terms:
            kf_pose = p if kf.id == active.id else kf.pose
            e, _, _ = _ray_residuals(kf_pose, rays, pos[li])
            value, _ = cauchy_loss(np.sum(e * e, axis=-1), params.cauchy_c)
            c += float(np.sum(value))
        return c

    lam = params.damping_init
    cost = total_cost(pose, positions)
    trace = [cost]
    for _ in range(params.max_iters):
        H_pp = np.zeros((6, 6))
        g_p = np.zeros(6)
        H_pl = np.zeros((L, 6, 3))
        H_ll = np.zeros((L, 3, 3))
        g_l = np.zeros((L, 3))

        for kf, rays, li in terms:
            kf_pose = pose if kf.id == active.id else kf.pose
            e, q, n = _ray_residuals(kf_pose, rays, positions[li])
            w = cauchy_loss(np.sum(e * e, axis=-1), params.cauchy_c)[1]
            hn = q / n[:, None]
            dh_dq = (np.eye(3) - hn[:, :, None] * hn[:, None, :]) / n[:, None, None]
            J_lm = -dh_dq @ kf_pose.R.T
            wJ = w[:, None, None] * J_lm
            H_blocks = np.einsum("nij,nik->njk", wJ, J_lm)
            g_blocks = np.einsum("nij,ni->nj", wJ, e)
            np.add.at(H_ll, li, H_blocks)
            np.add.at(g_l, li, g_blocks)
            if kf.id == active.id:
                qx = np.zeros((len(q), 3, 3))
                qx[:, 0, 1] = -q[:, 2]
                qx[:, 0, 2] = q[:, 1]
                qx[:, 1, 0] = q[:, 2]
                qx[:, 1, 2] = -q[:, 0]
                qx[:, 2, 0] = -q[:, 1]
                qx[:, 2, 1] = q[:, 0]
                J_pose = np.concatenate([-dh_dq @ qx, -J_lm], axis=2)
                wJp = w[:, None, None] * J_pose
                H_pp += np.einsum("nij,nik->jk", wJp, J_pose)
                g_p += np.einsum("nij,ni->j", wJp, e)
                np.add.at(
                    H_pl, li, np.einsum("nij,nik->njk", wJp, J_lm)
                )

        # damped Schur reduction onto the pose block
        step_done = False
        for _ in range(8):
            Hll_d = H_ll + lam * np.eye(3)
            try:
                Hll_inv = np.linalg.inv(Hll_d)
            except np.linalg.LinAlgError:
                lam *= params.damping_scale
                continue
            S = H_pp + lam * np.eye(6)
            rhs = -g_p.copy()
            S = S - np.einsum("nij,njk,nlk->il", H_pl, Hll_inv, H_pl)
            rhs += np.einsum("nij,njk,nk->i", H_pl, Hll_inv, g_l)
            try:
                dp = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                lam *= params.damping_scale
                continue
            dl = -np.einsum(
                "nij,nj->ni", Hll_inv, g_l + np.einsum("nji,j->ni", H_pl, dp)
            )
            new_pose = Pose(
                pose.R @ so3_exp(dp[:3]), pose.t + dp[3:], pose.timestamp
            )
            new_positions = positions + dl
            new_cost = total_cost(new_pose, new_positions)
            if new_cost < cost:
                pose, positions, cost = new_pose, new_positions, new_cost
                trace.append(cost)
                lam = max(lam / params.damping_scale, 1e-12)
                step_norm = float(np.linalg.norm(dp)) + float(
                    np.linalg.norm(dl)
                )
                step_done = True
                break
            lam *= params.damping_scale
        if not step_done or step_norm < params.step_tol:
            break

    refined = {l: positions[lm_index[l]].copy() for l in lm_ids}
    return pose, refined, trace
