"""Sparse feature front-end: detection, pyramidal KLT flow, stereo depth.

Corners are picked one per empty grid cell from a min-eigenvalue response
map, which keeps the motion system's conditioning uniform across the
image. Flow uses OpenCV's pyramidal Lucas-Kanade with forward-backward
verification; stereo correspondence reuses the same tracker seeded at the
zero-disparity prediction and is validated by triangulation residuals, so
it works for rectified pinhole and fisheye rigs alike.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import cv2
import numpy as np

from .camera import StereoRig, pixel_in_bounds, project_masked, unproject


@dataclass(frozen=True)
class TrackingParams:
    grid_cell: int = 32
    target_features: int = 200
    min_score: float = 1e-4  # min-eigenvalue response on a [0,1] image
    window: int = 21
    pyramid_levels: int = 4
    max_iterations: int = 30
    epsilon: float = 0.01  # px, per-level convergence threshold
    fb_threshold: float = 0.5  # px, forward-backward round-trip gate
    stereo_min_depth: float = 0.1  # m
    stereo_max_depth: float = 100.0  # m
    stereo_reproj_tol: float = 1.0  # px

    def win_size(self) -> tuple[int, int]:
        return (self.window, self.window)

    def criteria(self) -> tuple[int, int, float]:
        return (
            cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT,
            self.max_iterations,
            self.epsilon,
        )


class TrackStatus(enum.Enum):
    TRACKED = "tracked"
    LOST = "lost"
    OUT_OF_BOUNDS = "out_of_bounds"
    FB_FAILED = "fb_failed"


@dataclass
class FeatureTrack:
    id: int
    px_prev: np.ndarray
    px_cur: np.ndarray
    status: TrackStatus
    age: int = 1


@dataclass
class ImagePyramid:
    """Grayscale pyramid; level 0 is the source, each level half the previous."""

    levels: list[np.ndarray]

    @classmethod
    def build(cls, img: np.ndarray, params: TrackingParams) -> "ImagePyramid":
        if img.ndim == 3:
            img = cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
        if img.dtype != np.uint8:
            img = np.clip(img, 0, 255).astype(np.uint8)
        levels = [img]
        for _ in range(params.pyramid_levels - 1):
            levels.append(cv2.pyrDown(levels[-1]))
        return cls(levels)

    @property
    def image(self) -> np.ndarray:
        return self.levels[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels[0].shape


def detect_features(
    img: np.ndarray,
    existing: np.ndarray,
    target_count: int = 200,
    cell_size: int = 32,
    min_score: float = 1e-4,
) -> np.ndarray:
    """New corners filling empty grid cells, strongest response first.

    Returns an (m, 2) float array. Candidates keep at least cell_size
    distance from existing features and from each other, and the total
    (existing + new) never exceeds target_count.
    """
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
    existing = np.asarray(existing, dtype=np.float64).reshape(-1, 2)
    budget = target_count - len(existing)
    if budget <= 0:
        return np.zeros((0, 2))

    response = cv2.cornerMinEigenVal(img.astype(np.float32) / 255.0, 3, 3)
    # keep clear of the border so a tracking window around any detection
    # stays inside the image
    margin = 16
    response[:margin, :] = 0
    response[-margin:, :] = 0
    response[:, :margin] = 0
    response[:, -margin:] = 0

    h, w = img.shape
    ncx, ncy = w // cell_size, h // cell_size
    occupied = np.zeros((ncy, ncx), dtype=bool)
    for x, y in existing:
        ix, iy = int(x // cell_size), int(y // cell_size)
        if 0 <= ix < ncx and 0 <= iy < ncy:
            occupied[iy, ix] = True

    # per-cell response maxima in one block reduction
    blocks = (
        response[: ncy * cell_size, : ncx * cell_size]
        .reshape(ncy, cell_size, ncx, cell_size)
        .transpose(0, 2, 1, 3)
        .reshape(ncy, ncx, cell_size * cell_size)
    )
    flat_arg = np.argmax(blocks, axis=2)
    scores = np.take_along_axis(blocks, flat_arg[:, :, None], axis=2)[:, :, 0]
    usable = (~occupied) & (scores >= min_score)
    iy, ix = np.nonzero(usable)
    if len(iy) == 0:
        return np.zeros((0, 2))
    cy_, cx_ = np.divmod(flat_arg[iy, ix], cell_size)
    xs = (ix * cell_size + cx_).astype(np.float64)
    ys = (iy * cell_size + cy_).astype(np.float64)
    order = np.argsort(-scores[iy, ix])

    # greedy accept, strongest first; a conflict within cell_size can only
    # come from the 3x3 cell neighborhood, so bucket anchors by cell
    buckets: dict[tuple[int, int], list[np.ndarray]] = {}
    for pt in existing:
        buckets.setdefault(
            (int(pt[0] // cell_size), int(pt[1] // cell_size)), []
        ).append(pt)

    def conflicts(pt) -> bool:
        cx0, cy0 = int(pt[0] // cell_size), int(pt[1] // cell_size)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for q in buckets.get((cx0 + dx, cy0 + dy), ()):
                    if (pt[0] - q[0]) ** 2 + (pt[1] - q[1]) ** 2 < cell_size**2:
                        return True
        return False

    picked: list[tuple[float, float]] = []
    for k in order:
        if len(picked) >= budget:
            break
        pt = np.array([xs[k], ys[k]])
        if conflicts(pt):
            continue
        picked.append((xs[k], ys[k]))
        buckets.setdefault(
            (int(pt[0] // cell_size), int(pt[1] // cell_size)), []
        ).append(pt)
    return np.array(picked, dtype=np.float64).reshape(-1, 2)


def _pyr_lk(
    pyr_a: ImagePyramid,
    pyr_b: ImagePyramid,
    pts: np.ndarray,
    params: TrackingParams,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    flags = 0
    guess = None
    if init is not None:
        guess = np.ascontiguousarray(init, dtype=np.float32).reshape(-1, 1, 2)
        flags = cv2.OPTFLOW_USE_INITIAL_FLOW
    out, st, _ = cv2.calcOpticalFlowPyrLK(
        pyr_a.image,
        pyr_b.image,
        np.ascontiguousarray(pts, dtype=np.float32).reshape(-1, 1, 2),
        guess,
        winSize=params.win_size(),
        maxLevel=params.pyramid_levels - 1,
        criteria=params.criteria(),
        flags=flags,
    )
    return out.reshape(-1, 2).astype(np.float64), st.reshape(-1).astype(bool)


def track_klt(
    pyr_prev: ImagePyramid,
    pyr_cur: ImagePyramid,
    pts: np.ndarray,
    params: TrackingParams = TrackingParams(),
) -> list[FeatureTrack]:
    """Sub-pixel flow with forward-backward verification.

    Track ids are the input sequence indices; callers owning persistent
    tracks remap them. Failures are encoded in the status, never raised.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return []
    cur, st_fwd = _pyr_lk(pyr_prev, pyr_cur, pts, params)
    back, st_bwd = _pyr_lk(pyr_cur, pyr_prev, cur, params)
    fb_err = np.linalg.norm(back - pts, axis=-1)

    h, w = pyr_cur.shape
    half = params.window // 2
    inside = (
        (cur[:, 0] >= half)
        & (cur[:, 0] <= w - 1 - half)
        & (cur[:, 1] >= half)
        & (cur[:, 1] <= h - 1 - half)
    )

    tracks = []
    for i in range(len(pts)):
        if not st_fwd[i]:
            status = TrackStatus.LOST
        elif not inside[i]:
            status = TrackStatus.OUT_OF_BOUNDS
        elif not st_bwd[i] or fb_err[i] > params.fb_threshold:
            status = TrackStatus.FB_FAILED
        else:
            status = TrackStatus.TRACKED
        tracks.append(FeatureTrack(i, pts[i], cur[i], status))
    return tracks


@dataclass
class StereoDepth:
    """Per-point triangulation output in the left camera frame."""

    d: np.ndarray  # (n,) Euclidean depth ||P||
    P: np.ndarray  # (n, 3)
    valid: np.ndarray  # (n,) bool
    px_right: np.ndarray  # (n, 2) matched right-image positions


def stereo_depth(
    rig: StereoRig,
    left_pyr: ImagePyramid,
    right_pyr: ImagePyramid,
    pts_left: np.ndarray,
    params: TrackingParams = TrackingParams(),
    rays_left: np.ndarray | None = None,
) -> StereoDepth:
    """Euclidean depth of left-image points by KLT stereo matching.

    The right-image search starts at the zero-disparity prediction (the
    left ray re-projected through the right camera at infinite depth).
    Matches triangulate via the midpoint of the common perpendicular and
    are rejected on negative depth, range, or reprojection residuals.
    Pass rays_left to reuse already-unprojected rays of pts_left.
    """
    pts_left = np.asarray(pts_left, dtype=np.float64).reshape(-1, 2)
    n = len(pts_left)
    out = StereoDepth(
        np.zeros(n), np.zeros((n, 3)), np.zeros(n, dtype=bool), np.zeros((n, 2))
    )
    if n == 0:
        return out

    rays_l = unproject(pts_left, rig.left) if rays_left is None else rays_left
    rays_inf = rays_l @ rig.R_rl.T  # left rays rotated into the right frame
    guess, guessable = project_masked(rays_inf, rig.right)
    guessable &= pixel_in_bounds(guess, rig.right)
    if not np.any(guessable):
        return out

    idx = np.flatnonzero(guessable)
    matched, st = _pyr_lk(
        left_pyr, right_pyr, pts_left[idx], params, init=guess[idx]
    )
    h, w = right_pyr.shape
    half = params.window // 2
    inside = (
        (matched[:, 0] >= half)
        & (matched[:, 0] <= w - 1 - half)
        & (matched[:, 1] >= half)
        & (matched[:, 1] <= h - 1 - half)
    )
    keep = idx[st & inside]
    if len(keep) == 0:
        return out
    px_r = matched[st & inside]
    out.px_right[keep] = px_r

    rays_r = unproject(px_r, rig.right) @ rig.R_rl  # expressed in the left frame
    c2 = rig.right_center_in_left()
    P, a, b = _triangulate_midpoint(rays_l[keep], rays_r, c2)

    d = np.linalg.norm(P, axis=-1)
    ok = (
        (a > 0)
        & (b > 0)
        & (d > params.stereo_min_depth)
        & (d < params.stereo_max_depth)
    )
    # reprojection residual in both views
    rl, vl = project_masked(P, rig.left)
    rr, vr = project_masked(rig.left_to_right(P), rig.right)
    ok &= vl & vr
    ok &= np.linalg.norm(rl - pts_left[keep], axis=-1) <= params.stereo_reproj_tol
    ok &= np.linalg.norm(rr - px_r, axis=-1) <= params.stereo_reproj_tol

    out.P[keep] = P
    out.d[keep] = d
    out.valid[keep] = ok
    return out


def _triangulate_midpoint(
    u1: np.ndarray, u2: np.ndarray, c2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Midpoint of the common perpendicular of rays (0, u1) and (c2, u2).

    Returns the midpoints and the signed ray parameters (a, b); negative
    parameters indicate an intersection behind a camera.
    """
    d11 = np.sum(u1 * u1, axis=-1)
    d12 = np.sum(u1 * u2, axis=-1)
    d22 = np.sum(u2 * u2, axis=-1)
    rhs1 = u1 @ c2
    rhs2 = u2 @ c2
    det = d11 * d22 - d12 * d12
    det = np.where(np.abs(det) < 1e-12, np.nan, det)
    a = (rhs1 * d22 - rhs2 * d12) / det
    b = (rhs1 * d12 - rhs2 * d11) / det
    P = 0.5 * (u1 * a[:, None] + c2 + u2 * b[:, None])
    bad = ~np.isfinite(a) | ~np.isfinite(b)
    a = np.where(bad, -1.0, a)
    b = np.where(bad, -1.0, b)
    P = np.where(bad[:, None], 0.0, P)
    return P, a, b
