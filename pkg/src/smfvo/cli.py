"""Command-line interface: run odometry, evaluate trajectories, make data.

    smfvo run   --dataset <dir> [--format euroc|synth] [--config <file>]
                [--mode ray|pixel] [--no-opt] [--out traj.txt] [--stats stats.csv]
    smfvo eval  --est traj.txt --gt traj.txt [--align first|sim]
    smfvo synth --out <dir> [--seed N] [--frames N] [--twist wx,wy,wz,vx,vy,vz]
                [--camera pinhole|fisheye]
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, CameraModel, StereoRig
from .config import PipelineConfig
from .dataset import load_dataset, write_synth_dataset
from .motion_field import Twist
from .pipeline import STATS_HEADER, VoPipeline
from .synthetic import SpectralTexture, constant_twist_scene
from .trajectory import ate_rmse, read_trajectory, write_trajectory


def synth_camera(kind: str = "pinhole") -> CameraIntrinsics:
    """Default synthetic cameras: a 90-deg pinhole or a 120-deg fisheye."""
    if kind == "pinhole":
        return CameraIntrinsics(CameraModel.PINHOLE, 300.0, 300.0, 256.0, 192.0, 512, 384)
    if kind == "fisheye":
        return CameraIntrinsics(
            CameraModel.EQUIDISTANT_FISHEYE, 244.0, 244.0, 256.0, 192.0, 512, 384
        )
    raise ValueError(f"unknown synthetic camera {kind!r}")


def synth_rig(kind: str = "pinhole", baseline: float = 0.1) -> StereoRig:
    cam = synth_camera(kind)
    return StereoRig(cam, cam, np.eye(3), np.array([-baseline, 0.0, 0.0]))


def _cmd_run(args) -> int:
    config = (
        PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    )
    if args.mode:
        config = replace(config, mode=args.mode)
    if args.no_opt:
        config = replace(config, optimize=False)

    reader = load_dataset(args.dataset, args.format)
    pipeline = VoPipeline(reader.rig, config)

    stats_file = open(args.stats, "w") if args.stats else None
    if stats_file:
        stats_file.write(STATS_HEADER + "\n")
    n = 0
    total_us = 0
    try:
        for frame in reader.frames():
            result = pipeline.process_frame(frame.left, frame.right, frame.timestamp)
            if stats_file:
                stats_file.write(result.stats_row() + "\n")
            n += 1
            total_us += result.timings["total_us"]
    finally:
        if stats_file:
            stats_file.close()

    if args.out:
        write_trajectory(pipeline.trajectory, args.out)
    print(f"processed {n} frames, {total_us / max(n, 1) / 1000.0:.3f} ms/frame")

    gt = reader.ground_truth()
    if gt is not None and len(pipeline.trajectory) >= 2:
        print(f"ATE_RMSE_m: {ate_rmse(pipeline.trajectory, gt, 'first_frame'):.6f}")
    return 0


def _cmd_eval(args) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    align = {"first": "first_frame", "sim": "similarity"}[args.align]
    print(f"ATE_RMSE_m: {ate_rmse(est, gt, align):.6f}")
    return 0


def _cmd_synth(args) -> int:
    parts = [float(x) for x in args.twist.split(",")]
    if len(parts) != 6:
        raise SystemExit("--twist needs 6 comma-separated values wx,wy,wz,vx,vy,vz")
    twist = Twist(np.array(parts[:3]), np.array(parts[3:]))
    scene = constant_twist_scene(
        synth_camera(args.camera),
        twist,
        args.frames,
        n_points=0,
        seed=args.seed,
        rig=synth_rig(args.camera),
        texture=SpectralTexture(seed=args.seed),
        box_half=args.box_half,
    )
    write_synth_dataset(scene, args.out)
    print(f"wrote {args.frames} stereo frames to {Path(args.out).resolve()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smfvo", description="Sparse motion-field stereo visual odometry"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run odometry over a stereo dataset")
    run.add_argument("--dataset", required=True)
    run.add_argument("--format", choices=("euroc", "synth"), default="euroc")
    run.add_argument("--config", default=None)
    run.add_argument("--mode", choices=("ray", "pixel"), default=None)
    run.add_argument("--no-opt", action="store_true", help="disable keyframe refinement")
    run.add_argument("--out", default=None, help="trajectory output path")
    run.add_argument("--stats", default=None, help="per-frame stats CSV path")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="absolute trajectory error of an estimate")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--align", choices=("first", "sim"), default="first")
    ev.set_defaults(func=_cmd_eval)

    synth = sub.add_parser("synth", help="generate a synthetic stereo dataset")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--frames", type=int, default=100)
    synth.add_argument(
        "--twist",
        default="0.001,0.003,0.0005,0.004,0.001,0.012",
        help="constant per-frame twist wx,wy,wz,vx,vy,vz",
    )
    synth.add_argument("--out", required=True)
    synth.add_argument("--camera", choices=("pinhole", "fisheye"), default="pinhole")
    synth.add_argument("--box-half", type=float, default=8.0)
    synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
