"""Tests for the model module."""

import math
from typing import Tuple

import numpy as np
import pytest

from rgbd_relay.errors import (
    DimensionMismatchError,
    FrameOrderError,
    InvalidIntrinsicsError,
    InvalidPlaneError,
    InvalidPoseError,
)
from rgbd_relay.model import (
    CameraIntrinsics,
    ColorImage,
    DepthImage,
    FloorPlane,
    Pose,
    RgbdFrame,
    intrinsics_for,
    quat_from_euler_yxz,
    quat_from_matrix,
    quat_to_euler_yxz,
    validate_frame,
)


def make_frame(
    frame_id: int = 0, depth_size: Tuple[int, int] = (4, 3)
) -> RgbdFrame:
    """Small consistent frame."""
    dw, dh = depth_size
    return RgbdFrame(
        frame_id=frame_id,
        timestamp_micros=frame_id * 33_333,
        color=ColorImage.filled(8, 6),
        depth=DepthImage.zeros(dw, dh),
        depth_intrinsics=intrinsics_for(4, 3, 75.0),
        color_intrinsics=intrinsics_for(8, 6, 90.0),
        depth_to_color=Pose(),
    )


def test_depth_image_shapes_flat_data() -> None:
    """Test flat pixel lists are reshaped row-major."""
    image = DepthImage(3, 2, [1, 2, 3, 4, 5, 6])
    assert image.data.shape == (2, 3)
    assert image.data[1, 0] == 4
    assert image.valid_count() == 6


def test_depth_image_wrong_size() -> None:
    """Test a pixel count that disagrees with the size."""
    with pytest.raises(DimensionMismatchError):
        DepthImage(3, 2, [1, 2, 3])


def test_depth_image_is_read_only() -> None:
    """Test image pixels cannot be changed in place."""
    image = DepthImage.zeros(2, 2)
    with pytest.raises(ValueError):
        image.data[0, 0] = 5


def test_depth_image_equality_and_digest() -> None:
    """Test equal pixels compare and hash equal."""
    a = DepthImage(2, 1, [7, 0])
    b = DepthImage(2, 1, np.array([7, 0], dtype=np.uint16))
    assert a == b
    assert a.digest() == b.digest()
    assert a != DepthImage(2, 1, [7, 1])


def test_color_image_size_check() -> None:
    """Test color data must hold three bytes per pixel."""
    with pytest.raises(DimensionMismatchError):
        ColorImage(2, 2, np.zeros(8, dtype=np.uint8))


def test_intrinsics_validation() -> None:
    """Test focal length and principal point checks."""
    with pytest.raises(InvalidIntrinsicsError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 4, 4)
    with pytest.raises(InvalidIntrinsicsError):
        CameraIntrinsics(1.0, 1.0, 4.0, 0.0, 4, 4)


def test_intrinsics_for_field_of_view() -> None:
    """Test a 90 degree camera has f equal to half its width."""
    intr = intrinsics_for(640, 360, 90.0)
    assert intr.fx == pytest.approx(320.0)
    assert intr.cx == pytest.approx(319.5)


def test_intrinsics_scaled_keeps_field_of_view() -> None:
    """Test scaling to another resolution keeps the field of view."""
    full = intrinsics_for(1280, 720, 90.0)
    half = full.scaled(640, 360)
    expected = intrinsics_for(640, 360, 90.0)
    assert half.fx == pytest.approx(expected.fx)
    assert half.cx == pytest.approx(expected.cx)
    assert half.cy == pytest.approx(expected.cy)


def test_unproject_project_inverse() -> None:
    """Test projecting an unprojected pixel lands on the same pixel."""
    intr = intrinsics_for(32, 24, 60.0)
    points = intr.unproject([3, 30], [5, 20], [1.5, 4.0])
    assert (points[:, 2] < 0).all()
    uv, depth = intr.project(points)
    assert np.allclose(uv, [[3, 5], [30, 20]])
    assert np.allclose(depth, [1.5, 4.0])


def test_pose_rejects_non_unit_rotation() -> None:
    """Test the unit quaternion check."""
    with pytest.raises(InvalidPoseError):
        Pose((1.0, 0.1, 0.0, 0.0))


def test_pose_compose_inverse_identity() -> None:
    """Test a pose composed with its inverse is the identity."""
    pose = Pose.from_euler_yxz(0.4, -0.2, 0.1, (1.0, 2.0, -3.0))
    both = pose.compose(pose.inverse())
    assert np.allclose(both.as_matrix(), np.eye(4))


def test_pose_compose_matches_matrices() -> None:
    """Test compose agrees with 4x4 matrix multiplication."""
    a = Pose.from_euler_yxz(0.3, 0.1, 0.0, (0.0, 1.0, 0.0))
    b = Pose.from_euler_yxz(-1.2, 0.0, 0.5, (2.0, 0.0, 1.0))
    assert np.allclose(
        a.compose(b).as_matrix(), a.as_matrix() @ b.as_matrix()
    )


def test_pose_transform_points() -> None:
    """Test a quarter turn about y maps -z onto -x."""
    pose = Pose.from_euler_yxz(math.pi / 2, translation=(0.0, 1.0, 0.0))
    out = pose.transform_points([[0.0, 0.0, -1.0]])
    assert np.allclose(out, [[-1.0, 1.0, 0.0]])
    assert np.allclose(pose.position(), [0.0, 1.0, 0.0])


def test_euler_round_trip() -> None:
    """Test Y-X-Z angles survive a trip through the quaternion."""
    pose = Pose.from_euler_yxz(1.0, 0.3, -0.2)
    assert np.allclose(pose.euler_yxz(), (1.0, 0.3, -0.2))


def same_rotation(a: Tuple[float, ...], b: Tuple[float, ...]) -> float:
    """Distance between two unit quaternions, ignoring the sign."""
    qa, qb = np.asarray(a), np.asarray(b)
    return float(min(np.abs(qa - qb).max(), np.abs(qa + qb).max()))


def test_euler_decomposition_recomposes() -> None:
    """Test 10,000 random rotations survive decompose then compose."""
    rng = np.random.default_rng(2024)
    samples = rng.normal(size=(10_000, 4))
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    for sample in samples:
        w, x, y, z = (float(c) for c in sample)
        q = (w, x, y, z)
        rebuilt = quat_from_euler_yxz(*quat_to_euler_yxz(q))
        assert same_rotation(q, rebuilt) <= 1e-9


def test_euler_quarter_turn_yaw() -> None:
    """Test a quarter turn about y is all yaw."""
    q = (math.cos(math.pi / 4), 0.0, math.sin(math.pi / 4), 0.0)
    assert np.allclose(
        quat_to_euler_yxz(q), (math.pi / 2, 0.0, 0.0), rtol=0, atol=1e-9
    )


def test_euler_angles_round_trip_exactly() -> None:
    """Test angles away from the poles come back unchanged."""
    angles = quat_to_euler_yxz(quat_from_euler_yxz(0.3, 0.2, 0.1))
    assert np.allclose(angles, (0.3, 0.2, 0.1), rtol=0, atol=1e-9)


@pytest.mark.parametrize("pitch", [math.pi / 2, -math.pi / 2])
def test_euler_gimbal_lock_folds_roll(pitch: float) -> None:
    """Test roll is zero at the poles and the rotation is unchanged."""
    q = quat_from_euler_yxz(0.3, pitch, 0.2)
    yaw, found_pitch, roll = quat_to_euler_yxz(q)
    assert roll == 0.0
    assert found_pitch == pytest.approx(pitch, abs=1e-9)
    assert same_rotation(q, quat_from_euler_yxz(yaw, found_pitch, roll)) <= (
        1e-9
    )


def test_quat_from_matrix_all_branches() -> None:
    """Test matrix conversion for rotations near every branch."""
    angles = [
        (0.1, 0.0, 0.0),
        (math.pi, 0.0, 0.0),
        (0.0, math.pi, 0.0),
        (0.0, 0.0, math.pi),
        (3.0, 0.2, 2.9),
    ]
    for yaw, pitch, roll in angles:
        pose = Pose.from_euler_yxz(yaw, pitch, roll)
        back = Pose(quat_from_matrix(pose.rotation_matrix()))
        assert np.allclose(back.rotation_matrix(), pose.rotation_matrix())


def test_from_matrix() -> None:
    """Test building a pose from a homogeneous matrix."""
    pose = Pose.from_euler_yxz(0.7, 0.0, 0.0, (1.0, 2.0, 3.0))
    rebuilt = Pose.from_matrix(pose.as_matrix())
    assert np.allclose(rebuilt.as_matrix(), pose.as_matrix())


def test_floor_plane_validation() -> None:
    """Test floor normals must be unit and face up."""
    with pytest.raises(InvalidPlaneError):
        FloorPlane((0.0, 2.0, 0.0), 0.0)
    with pytest.raises(InvalidPlaneError):
        FloorPlane((0.0, -1.0, 0.0), 0.0)


def test_floor_plane_from_coefficients_flips_up() -> None:
    """Test a downward plane is normalized and flipped."""
    floor = FloorPlane.from_coefficients([0.0, -2.0, 0.0], 3.0)
    assert floor.normal == (0.0, 1.0, 0.0)
    assert floor.distance == pytest.approx(-1.5)
    assert floor.signed_distance([[0.0, -1.5, 0.0]])[0] == pytest.approx(0.0)


def test_validate_frame_passes_through() -> None:
    """Test a consistent frame is returned unchanged."""
    frame = make_frame()
    assert validate_frame(frame) is frame


def test_validate_frame_dimension_mismatch() -> None:
    """Test an image that disagrees with its intrinsics."""
    with pytest.raises(DimensionMismatchError):
        validate_frame(make_frame(depth_size=(5, 3)))


def test_validate_frame_order() -> None:
    """Test frame ids must increase."""
    with pytest.raises(FrameOrderError):
        validate_frame(make_frame(frame_id=3), previous_frame_id=3)
