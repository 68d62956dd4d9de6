import numpy as np
import pytest

from smfvo.camera import (
    CameraIntrinsics,
    CameraModel,
    StereoRig,
    pixel_in_bounds,
    project,
    unproject,
)
from smfvo.errors import NoConvergence, PointBehindCamera


def pinhole(fx=100.0, fy=100.0, cx=320.0, cy=240.0, w=640, h=480):
    return CameraIntrinsics(CameraModel.PINHOLE, fx, fy, cx, cy, w, h)


def radtan(dist=(-0.28, 0.07, 2e-4, 1.8e-5)):
    return CameraIntrinsics(
        CameraModel.PINHOLE_RADTAN, 460.0, 458.0, 367.0, 248.0, 752, 480, dist
    )


def fisheye(fx=150.0, fy=150.0, cx=320.0, cy=240.0, dist=()):
    return CameraIntrinsics(
        CameraModel.EQUIDISTANT_FISHEYE, fx, fy, cx, cy, 640, 480, dist
    )


class TestProject:
    def test_optical_axis(self):
        K = CameraIntrinsics(CameraModel.PINHOLE, 100, 100, 0, 0, 640, 480)
        assert np.allclose(project(np.array([0.0, 0.0, 5.0]), K), [0.0, 0.0])

    def test_unit_slope(self):
        K = pinhole()
        assert np.allclose(project(np.array([1.0, 0.0, 1.0]), K), [420.0, 240.0])

    def test_equidistant_radius_at_60_degrees(self):
        # with zero distortion the pixel radius equals f * theta
        K = fisheye()
        theta = np.pi / 3
        P = np.array([np.sin(theta), 0.0, np.cos(theta)])
        px = project(P, K)
        radius = np.linalg.norm(px - [K.cx, K.cy])
        assert abs(radius - 150.0 * theta) < 1e-9

    def test_behind_camera(self):
        with pytest.raises(PointBehindCamera):
            project(np.array([0.0, 0.0, -1.0]), pinhole())
        with pytest.raises(PointBehindCamera):
            # 150 deg off axis exceeds the equidistant validity limit
            project(np.array([0.5, 0.0, -0.866]), fisheye())

    def test_batched(self):
        K = pinhole()
        P = np.array([[0.0, 0.0, 2.0], [1.0, 0.0, 1.0]])
        px = project(P, K)
        assert px.shape == (2, 2)
        assert np.allclose(px[1], [420.0, 240.0])


class TestUnproject:
    def test_principal_point(self):
        for K in (pinhole(), radtan(), fisheye(dist=(0.01, -0.002, 1e-4, -1e-5))):
            r = unproject(np.array([K.cx, K.cy]), K)
            assert np.allclose(r, [0.0, 0.0, 1.0], atol=1e-12)

    def test_inverse_of_unit_slope(self):
        r = unproject(np.array([420.0, 240.0]), pinhole())
        assert np.allclose(r, np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0))

    @pytest.mark.parametrize(
        "K",
        [
            pinhole(),
            radtan(),
            fisheye(dist=(0.015, -0.005, 8e-4, -2e-4)),
        ],
        ids=["pinhole", "radtan", "equidistant"],
    )
    def test_round_trip_1000_pixels(self, K):
        rng = np.random.default_rng(7)
        # stay away from the border where radtan folds for strong distortion
        px = np.stack(
            [
                rng.uniform(0.15 * K.width, 0.85 * K.width, 1000),
                rng.uniform(0.15 * K.height, 0.85 * K.height, 1000),
            ],
            axis=-1,
        )
        rays = unproject(px, K)
        assert np.allclose(np.linalg.norm(rays, axis=-1), 1.0, atol=1e-12)
        back = project(rays, K)
        assert np.max(np.linalg.norm(back - px, axis=-1)) < 1e-6

    def test_ray_round_trip(self):
        rng = np.random.default_rng(3)
        for K in (pinhole(), radtan(), fisheye(dist=(0.01, -0.002, 1e-4, -1e-5))):
            rays = rng.normal(size=(500, 3))
            rays[:, 2] = np.abs(rays[:, 2]) + 1.5
            rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
            px = project(rays, K)
            inside = pixel_in_bounds(px, K)
            back = unproject(px[inside], K)
            dots = np.sum(back * rays[inside], axis=-1)
            assert np.all(dots > 1.0 - 1e-12)

    def test_no_convergence_on_pathological_distortion(self):
        K = radtan(dist=(12.0, -80.0, 0.0, 0.0))
        with pytest.raises(NoConvergence):
            unproject(np.array([700.0, 470.0]), K)


def test_near_axis_models_agree():
    # below 1 deg off-axis the equidistant and pinhole rays from the same
    # pixel offset differ by less than 1e-3 relative
    Kp = pinhole(fx=400.0, fy=400.0)
    Ke = CameraIntrinsics(CameraModel.EQUIDISTANT_FISHEYE, 400.0, 400.0, 320.0, 240.0, 640, 480)
    rng = np.random.default_rng(11)
    ang = rng.uniform(0, np.deg2rad(1.0), 200)
    radius = 400.0 * np.tan(ang)
    phi = rng.uniform(0, 2 * np.pi, 200)
    px = np.stack([320.0 + radius * np.cos(phi), 240.0 + radius * np.sin(phi)], axis=-1)
    rp = unproject(px, Kp)
    re = unproject(px, Ke)
    assert np.max(np.linalg.norm(rp - re, axis=-1)) < 1e-3


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(CameraModel.PINHOLE, -1.0, 100.0, 320, 240, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(CameraModel.PINHOLE, 100.0, 100.0, 900, 240, 640, 480)


def test_stereo_rig_validation():
    K = pinhole()
    with pytest.raises(ValueError):
        StereoRig(K, K, np.eye(3), np.zeros(3))
    rig = StereoRig(K, K, np.eye(3), np.array([-0.1, 0.0, 0.0]))
    assert rig.baseline == pytest.approx(0.1)
    # a point on the left optical axis lands at (b, 0, Z)... sign per T_rl
    X_r = rig.left_to_right(np.array([0.0, 0.0, 2.0]))
    assert np.allclose(X_r, [-0.1, 0.0, 2.0])
    assert np.allclose(rig.right_center_in_left(), [0.1, 0.0, 0.0])
