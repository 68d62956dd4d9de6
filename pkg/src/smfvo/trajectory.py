"""Trajectory container, text serialization and ATE evaluation.

The on-disk format is one pose per line, `timestamp tx ty tz qx qy qz qw`
(quaternion x, y, z, w; timestamps in seconds with 9 decimal places).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoOverlap, ParseError
from .geometry import Pose, quaternion_to_rotation, rotation_to_quaternion

ASSOCIATION_GATE_S = 0.010  # nearest-timestamp matching window


@dataclass
class Trajectory:
    poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        ts = self.timestamps
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses])

    @property
    def translations(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.poses)

    def append(self, pose: Pose) -> None:
        if self.poses and pose.timestamp <= self.poses[-1].timestamp:
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.poses.append(pose)

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "Trajectory":
        """Trajectory moved by a world-frame rigid transform."""
        return Trajectory(
            [Pose(R @ p.R, R @ p.t + t, p.timestamp) for p in self.poses]
        )


def write_trajectory(traj: Trajectory, path) -> None:
    lines = []
    for p in traj.poses:
        q = rotation_to_quaternion(p.R)
        fields = [f"{p.timestamp:.9f}"] + [f"{x:.17g}" for x in (*p.t, *q)]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_trajectory(path) -> Trajectory:
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", lineno)
        try:
            vals = [float(x) for x in parts]
        except ValueError:
            raise ParseError(f"non-numeric field in {raw!r}", lineno) from None
        R = quaternion_to_rotation(np.array(vals[4:8]))
        poses.append(Pose(R, np.array(vals[1:4]), vals[0]))
    return Trajectory(poses)


def _associate(est: Trajectory, gt: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Indices of (est, gt) pairs matched by nearest timestamp within the gate."""
    ts_e = est.timestamps
    ts_g = gt.timestamps
    if len(ts_e) == 0 or len(ts_g) == 0:
        raise NoOverlap("empty trajectory")
    pos = np.searchsorted(ts_g, ts_e)
    pairs = []
    used = set()
    for i, p in enumerate(pos):
        best, best_dt = -1, ASSOCIATION_GATE_S
        for j in (p - 1, p):
            if 0 <= j < len(ts_g):
                dt = abs(ts_g[j] - ts_e[i])
                if dt <= best_dt:
                    best, best_dt = j, dt
        if best >= 0 and best not in used:
            pairs.append((i, best))
            used.add(best)
    if len(pairs) < 2:
        raise NoOverlap("fewer than 2 associable poses within 10 ms")
    idx = np.array(pairs)
    return idx[:, 0], idx[:, 1]


def ate_rmse(est: Trajectory, gt: Trajectory, align: str = "first_frame") -> float:
    """RMS translational error after rigid alignment of est onto gt.

    `first_frame` moves est so its first associated pose coincides with
    the ground truth's; `similarity` solves the least-squares rigid
    alignment over all associated translations (unit scale, the stereo
    trajectory is metric).
    """
    if align not in ("first_frame", "similarity"):
        raise ValueError(f"unknown alignment {align!r}")
    ie, ig = _associate(est, gt)
    t_e = est.translations[ie]
    t_g = gt.translations[ig]

    if align == "first_frame":
        p_e = est.poses[ie[0]]
        p_g = gt.poses[ig[0]]
        R = p_g.R @ p_e.R.T
        t = p_g.t - R @ p_e.t
    else:
        mu_e = t_e.mean(axis=0)
        mu_g = t_g.mean(axis=0)
        H = (t_e - mu_e).T @ (t_g - mu_g)
        U, _, Vt = np.linalg.svd(H)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
        R = Vt.T @ D @ U.T
        t = mu_g - R @ mu_e

    residual = t_e @ R.T + t - t_g
    return float(np.sqrt(np.mean(np.sum(residual * residual, axis=-1))))
