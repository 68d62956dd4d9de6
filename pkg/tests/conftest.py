import numpy as np
import pytest

from smfvo.camera import CameraIntrinsics, CameraModel, StereoRig
from smfvo.motion_field import Twist
from smfvo.synthetic import SpectralTexture, constant_twist_scene


def pinhole_camera(f=300.0, w=512, h=384):
    return CameraIntrinsics(CameraModel.PINHOLE, f, f, w / 2.0, h / 2.0, w, h)


def fisheye_camera(f=244.0, w=512, h=384):
    # 2 * atan-free equidistant: theta = 60 deg maps to the side border
    return CameraIntrinsics(CameraModel.EQUIDISTANT_FISHEYE, f, f, w / 2.0, h / 2.0, w, h)


def stereo_rig(camera, baseline=0.1):
    return StereoRig(camera, camera, np.eye(3), np.array([-baseline, 0.0, 0.0]))


def rendered_scene(camera, twist, n_frames, seed=0, box_half=7.0):
    """Textured-box scene ready for full front-end runs."""
    return constant_twist_scene(
        camera,
        twist,
        n_frames,
        n_points=0,
        seed=seed,
        rig=stereo_rig(camera),
        texture=SpectralTexture(seed=seed),
        box_half=box_half,
    )


def gentle_twist():
    """Per-frame motion large enough for flow SNR, small enough to integrate."""
    return Twist(
        np.array([0.0012, 0.0060, 0.0006]), np.array([0.0060, 0.0012, 0.0240])
    )


@pytest.fixture(scope="session")
def short_rendered_sequence():
    """30-frame pinhole stereo sequence with a constant known twist."""
    from smfvo.synthetic import render_textured_frame

    scene = rendered_scene(pinhole_camera(), gentle_twist(), 30, seed=4)
    frames = [
        (
            scene.trajectory[k].timestamp,
            render_textured_frame(scene, k, "left"),
            render_textured_frame(scene, k, "right"),
        )
        for k in range(scene.n_frames)
    ]
    return scene, frames
