"""Dataset ingestion: EuRoC-style stereo folders and the synth format.

Expected layout under the dataset root:

    cam0/data.csv        lines "timestamp_ns,filename"
    cam0/data/*.png      grayscale left images
    cam1/...             right camera, same structure
    calib.txt            flat key-value stereo calibration (see below)
    groundtruth.txt      synth format: trajectory text file (optional)
    state_groundtruth_estimate0/data.csv   euroc format (optional)

Calibration keys: per camera `cam0.model` (pinhole | pinhole_radtan |
equidistant), `cam0.fx/fy/cx/cy`, `cam0.width/height`, `cam0.dist`
(space-separated, up to 4), and the left-to-right extrinsics
`T_rl.rotation` (9 values, row-major) / `T_rl.translation` (3 values,
meters). Native EuRoC/KITTI/TUM-VI calibrations are converted to this
file once, outside the pipeline (see README).
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .camera import CameraIntrinsics, CameraModel, StereoRig
from .config import parse_flat_file
from .errors import EmptySequence, MissingCalibration, ParseError, UnpairableStreams
from .geometry import Pose, quaternion_to_rotation
from .trajectory import Trajectory, read_trajectory

PAIRING_TOL_NS = 1_000_000  # 1 ms

_MODEL_NAMES = {
    "pinhole": CameraModel.PINHOLE,
    "pinhole_radtan": CameraModel.PINHOLE_RADTAN,
    "equidistant": CameraModel.EQUIDISTANT_FISHEYE,
}


def parse_calibration(path) -> StereoRig:
    path = Path(path)
    if not path.is_file():
        raise MissingCalibration(f"no calibration file at {path}")
    kv = parse_flat_file(path)

    def camera(prefix: str) -> CameraIntrinsics:
        try:
            model = _MODEL_NAMES[str(kv[f"{prefix}.model"])]
            dist = kv.get(f"{prefix}.dist", ())
            if isinstance(dist, (int, float)):
                dist = (float(dist),)
            return CameraIntrinsics(
                model=model,
                fx=float(kv[f"{prefix}.fx"]),
                fy=float(kv[f"{prefix}.fy"]),
                cx=float(kv[f"{prefix}.cx"]),
                cy=float(kv[f"{prefix}.cy"]),
                width=int(kv[f"{prefix}.width"]),
                height=int(kv[f"{prefix}.height"]),
                dist=tuple(dist),
            )
        except KeyError as e:
            raise ParseError(f"calibration missing key {e.args[0]}") from None

    try:
        R = np.array(kv["T_rl.rotation"], dtype=np.float64).reshape(3, 3)
        t = np.array(kv["T_rl.translation"], dtype=np.float64).reshape(3)
    except KeyError as e:
        raise ParseError(f"calibration missing key {e.args[0]}") from None
    return StereoRig(camera("cam0"), camera("cam1"), R, t)


def write_calibration(rig: StereoRig, path) -> None:
    inv = {v: k for k, v in _MODEL_NAMES.items()}
    lines = []
    for prefix, cam in (("cam0", rig.left), ("cam1", rig.right)):
        lines += [
            f"{prefix}.model = {inv[cam.model]}",
            f"{prefix}.fx = {cam.fx!r}",
            f"{prefix}.fy = {cam.fy!r}",
            f"{prefix}.cx = {cam.cx!r}",
            f"{prefix}.cy = {cam.cy!r}",
            f"{prefix}.width = {cam.width}",
            f"{prefix}.height = {cam.height}",
        ]
        if cam.dist:
            lines.append(f"{prefix}.dist = " + " ".join(repr(float(k)) for k in cam.dist))
    lines.append("T_rl.rotation = " + " ".join(repr(float(x)) for x in rig.R_rl.ravel()))
    lines.append("T_rl.translation = " + " ".join(repr(float(x)) for x in rig.t_rl))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class StereoFrame:
    timestamp: float  # seconds
    left: np.ndarray
    right: np.ndarray


def _read_image_index(cam_dir: Path) -> list[tuple[int, Path]]:
    csv = cam_dir / "data.csv"
    if not csv.is_file():
        raise UnpairableStreams(f"missing {csv}")
    entries = []
    for lineno, raw in enumerate(csv.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.lower().startswith("timestamp"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            raise ParseError(f"bad index line {raw!r}", lineno)
        try:
            ts = int(parts[0])
        except ValueError:
            raise ParseError(f"bad timestamp in {raw!r}", lineno) from None
        entries.append((ts, cam_dir / "data" / parts[1]))
    entries.sort(key=lambda e: e[0])
    return entries


def _pair_streams(
    left: list[tuple[int, Path]], right: list[tuple[int, Path]]
) -> list[tuple[int, Path, Path]]:
    """Match each left frame to the nearest unused right frame within 1 ms."""
    pairs = []
    j = 0
    for ts, lpath in left:
        while j + 1 < len(right) and abs(right[j + 1][0] - ts) < abs(right[j][0] - ts):
            j += 1
        if j < len(right) and abs(right[j][0] - ts) <= PAIRING_TOL_NS:
            pairs.append((ts, lpath, right[j][1]))
            j += 1
        if j >= len(right):
            break
    return pairs


class DatasetReader:
    """Timestamp-ordered stereo frames plus calibration and ground truth."""

    def __init__(self, root, fmt: str = "euroc"):
        if fmt not in ("euroc", "synth"):
            raise ValueError(f"unknown dataset format {fmt!r}")
        self.root = Path(root)
        self.format = fmt
        if not self.root.is_dir():
            raise EmptySequence(f"dataset root {self.root} does not exist")
        self.rig = parse_calibration(self.root / "calib.txt")

        left = _read_image_index(self.root / "cam0")
        right = _read_image_index(self.root / "cam1")
        self._pairs = _pair_streams(left, right)
        if not self._pairs:
            if not left or not right:
                raise EmptySequence("a camera stream has no frames")
            raise UnpairableStreams("no left/right timestamps within 1 ms")

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([ts * 1e-9 for ts, _, _ in self._pairs])

    def _load(self, idx: int) -> StereoFrame:
        ts, lpath, rpath = self._pairs[idx]
        left = cv2.imread(str(lpath), cv2.IMREAD_GRAYSCALE)
        right = cv2.imread(str(rpath), cv2.IMREAD_GRAYSCALE)
        if left is None or right is None:
            raise EmptySequence(f"unreadable image pair at {lpath} / {rpath}")
        return StereoFrame(ts * 1e-9, left, right)

    def frames(self, prefetch: bool = True):
        """Iterate stereo frames in timestamp order.

        With prefetch enabled a single producer thread keeps the next
        pair decoded while the caller processes the current one.
        """
        if not prefetch:
            for i in range(len(self._pairs)):
                yield self._load(i)
            return

        q: queue.Queue = queue.Queue(maxsize=2)
        stop = object()

        def producer():
            try:
                for i in range(len(self._pairs)):
                    q.put(self._load(i))
            except Exception as e:  # surfaced on the consumer side
                q.put(e)
            q.put(stop)

        thread = threading.Thread(target=producer, daemon=True)
        thread.start()
        while True:
            item = q.get()
            if item is stop:
                break
            if isinstance(item, Exception):
                raise item
            yield item
        thread.join()

    def ground_truth(self) -> Trajectory | None:
        if self.format == "synth":
            path = self.root / "groundtruth.txt"
            return read_trajectory(path) if path.is_file() else None
        csv = self.root / "state_groundtruth_estimate0" / "data.csv"
        if not csv.is_file():
            return None
        poses = []
        for raw in csv.read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#") or line.lower().startswith("timestamp"):
                continue
            parts = line.split(",")
            if len(parts) < 8:
                continue
            vals = [float(p) for p in parts[:8]]
            # euroc order: t_ns, p_xyz, q_wxyz
            q = np.array([vals[5], vals[6], vals[7], vals[4]])
            poses.append(Pose(quaternion_to_rotation(q), np.array(vals[1:4]), vals[0] * 1e-9))
        return Trajectory(poses) if poses else None


def load_dataset(path, fmt: str = "euroc") -> DatasetReader:
    return DatasetReader(path, fmt)


def write_synth_dataset(scene, out_dir) -> None:
    """Render a synthetic scene to disk in the reader's folder layout.

    Writes cam0/cam1 image folders with index files, calib.txt and the
    ground-truth trajectory. The scene must carry a stereo rig and a
    texture.
    """
    from .synthetic import render_textured_frame
    from .trajectory import Trajectory, write_trajectory

    if scene.rig is None or scene.texture is None:
        raise ValueError("synthetic dataset needs a rig and a texture")
    out = Path(out_dir)
    for cam_idx, which in ((0, "left"), (1, "right")):
        data_dir = out / f"cam{cam_idx}" / "data"
        data_dir.mkdir(parents=True, exist_ok=True)
        lines = ["#timestamp [ns],filename"]
        for k, pose in enumerate(scene.trajectory):
            ts_ns = int(round(pose.timestamp * 1e9))
            name = f"{ts_ns}.png"
            img = render_textured_frame(scene, k, which)
            cv2.imwrite(str(data_dir / name), img)
            lines.append(f"{ts_ns},{name}")
        (out / f"cam{cam_idx}" / "data.csv").write_text("\n".join(lines) + "\n")
    write_calibration(scene.rig, out / "calib.txt")
    write_trajectory(Trajectory(list(scene.trajectory)), out / "groundtruth.txt")
