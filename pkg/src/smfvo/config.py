"""Flat `section.key = value` configuration for the whole pipeline.

Every tunable default in the system has a key here; a config file only
needs to list the keys it overrides. Unknown keys are rejected so typos
surface immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError
from .keyframe import KeyframePolicy, OptimizerParams
from .ransac import RansacParams
from .tracking import TrackingParams

DEFAULTS: dict[str, object] = {
    "ransac.success_prob": 0.9999,
    "ransac.sample_size": 3,
    "ransac.max_iterations": 100,
    "ransac.gamma0": 0.9,
    "ransac.tau_pi_deg": 1.0,
    "ransac.tau_theta_deg": 1.0,
    "ransac.textbook_adaptation": False,
    "ransac.seed": 0,
    "tracking.grid_cell": 32,
    "tracking.target_features": 200,
    "tracking.min_score": 1e-4,
    "tracking.window": 21,
    "tracking.pyramid_levels": 4,
    "tracking.max_iterations": 30,
    "tracking.epsilon": 0.01,
    "tracking.fb_threshold": 0.5,
    "tracking.stereo_min_depth": 0.1,
    "tracking.stereo_max_depth": 100.0,
    "tracking.stereo_reproj_tol": 1.0,
    "keyframe.min_inliers": 60,
    "keyframe.max_elapsed": 30,
    "keyframe.rot_thresh_deg": 10.0,
    "keyframe.trans_thresh": 0.5,
    "opt.cauchy_c": 0.01,
    "opt.max_iters": 10,
    "opt.step_tol": 1e-10,
    "opt.damping_init": 1e-6,
    "opt.damping_scale": 10.0,
    "opt.min_landmarks": 10,
    "pipeline.mode": "ray",
    "pipeline.optimize": True,
    "pipeline.max_keyframes": 8,
}


def parse_value(text: str):
    """Best-effort typed value: bool, int, float, tuple of floats, or str."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    parts = t.split()
    if len(parts) > 1:
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            return t
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_flat_file(path) -> dict[str, object]:
    """Key/value pairs of a flat config-style text file."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ParseError("empty key", lineno)
        out[key] = parse_value(value)
    return out


@dataclass
class PipelineConfig:
    """Typed parameter bundle assembled from the flat key space."""

    ransac: RansacParams = field(default_factory=RansacParams)
    tracking: TrackingParams = field(default_factory=TrackingParams)
    policy: KeyframePolicy = field(default_factory=KeyframePolicy)
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)
    mode: str = "ray"
    optimize: bool = True
    seed: int = 0
    max_keyframes: int = 8

    @classmethod
    def from_dict(cls, overrides: dict[str, object]) -> "PipelineConfig":
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise ParseError(f"unknown config keys: {sorted(unknown)}")
        kv = dict(DEFAULTS)
        kv.update(overrides)
        if kv["pipeline.mode"] not in ("ray", "pixel"):
            raise ParseError(f"pipeline.mode must be ray or pixel, got {kv['pipeline.mode']!r}")
        return cls(
            ransac=RansacParams(
                success_prob=float(kv["ransac.success_prob"]),
                sample_size=int(kv["ransac.sample_size"]),
                max_iterations=int(kv["ransac.max_iterations"]),
                gamma0=float(kv["ransac.gamma0"]),
                tau_pi=math.radians(float(kv["ransac.tau_pi_deg"])),
                tau_theta=math.radians(float(kv["ransac.tau_theta_deg"])),
                textbook_adaptation=bool(kv["ransac.textbook_adaptation"]),
            ),
            tracking=TrackingParams(
                grid_cell=int(kv["tracking.grid_cell"]),
                target_features=int(kv["tracking.target_features"]),
                min_score=float(kv["tracking.min_score"]),
                window=int(kv["tracking.window"]),
                pyramid_levels=int(kv["tracking.pyramid_levels"]),
                max_iterations=int(kv["tracking.max_iterations"]),
                epsilon=float(kv["tracking.epsilon"]),
                fb_threshold=float(kv["tracking.fb_threshold"]),
                stereo_min_depth=float(kv["tracking.stereo_min_depth"]),
                stereo_max_depth=float(kv["tracking.stereo_max_depth"]),
                stereo_reproj_tol=float(kv["tracking.stereo_reproj_tol"]),
            ),
            policy=KeyframePolicy(
                min_inliers=int(kv["keyframe.min_inliers"]),
                max_elapsed=int(kv["keyframe.max_elapsed"]),
                rot_thresh=math.radians(float(kv["keyframe.rot_thresh_deg"])),
                trans_thresh=float(kv["keyframe.trans_thresh"]),
            ),
            optimizer=OptimizerParams(
                cauchy_c=float(kv["opt.cauchy_c"]),
                max_iters=int(kv["opt.max_iters"]),
                step_tol=float(kv["opt.step_tol"]),
                damping_init=float(kv["opt.damping_init"]),
                damping_scale=float(kv["opt.damping_scale"]),
                min_landmarks=int(kv["opt.min_landmarks"]),
            ),
            mode=str(kv["pipeline.mode"]),
            optimize=bool(kv["pipeline.optimize"]),
            seed=int(kv["ransac.seed"]),
            max_keyframes=int(kv["pipeline.max_keyframes"]),
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_dict(parse_flat_file(path))
