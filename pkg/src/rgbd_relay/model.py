"""Shared domain types: images, cameras, poses and planes.

Coordinates are right-handed with +y up and cameras looking down -z.
Depth is stored as 16-bit millimeters where 0 means "no measurement".
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Any, Optional, Tuple

import numpy as np
import numpy.typing as npt

from rgbd_relay.errors import (
    DimensionMismatchError,
    FrameOrderError,
    InvalidIntrinsicsError,
    InvalidPlaneError,
    InvalidPoseError,
)


Vector3 = Tuple[float, float, float]
Quaternion = Tuple[float, float, float, float]
FloatArray = npt.NDArray[np.float64]

UNIT_TOLERANCE = 1e-9
GIMBAL_TOLERANCE = 1e-12


def _readonly(array: npt.NDArray[Any]) -> npt.NDArray[Any]:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major 16-bit depth image in millimeters."""

    width: int
    height: int
    data: npt.NDArray[np.uint16]

    def __post_init__(self) -> None:
        """Copy the pixels into a read-only ``(height, width)`` array."""
        if self.width < 1 or self.height < 1:
            raise DimensionMismatchError(
                f"Depth image must be at least 1x1, got "
                f"{self.width}x{self.height}"
            )
        data = np.array(self.data, dtype=np.uint16)
        if data.size != self.width * self.height:
            raise DimensionMismatchError(
                f"Depth data has {data.size} values, expected "
                f"{self.width * self.height} for {self.width}x{self.height}"
            )
        object.__setattr__(
            self, "data", _readonly(data.reshape(self.height, self.width))
        )

    @classmethod
    def zeros(cls, width: int, height: int) -> "DepthImage":
        """Return an image with every pixel invalid."""
        return cls(width, height, np.zeros((height, width), dtype=np.uint16))

    def valid_count(self) -> int:
        """Number of pixels carrying a measurement."""
        return int(np.count_nonzero(self.data))

    def digest(self) -> str:
        """Short content hash used for end-to-end comparisons."""
        return hashlib.sha256(self.data.tobytes()).hexdigest()[:16]

    def __eq__(self, other: object) -> bool:
        """Compare dimensions and pixels."""
        if not isinstance(other, DepthImage):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Row-major 8-bit RGB image."""

    width: int
    height: int
    data: npt.NDArray[np.uint8]

    def __post_init__(self) -> None:
        """Copy the pixels into a read-only ``(height, width, 3)`` array."""
        if self.width < 1 or self.height < 1:
            raise DimensionMismatchError(
                f"Color image must be at least 1x1, got "
                f"{self.width}x{self.height}"
            )
        data = np.array(self.data, dtype=np.uint8)
        if data.size != 3 * self.width * self.height:
            raise DimensionMismatchError(
                f"Color data has {data.size} values, expected "
                f"{3 * self.width * self.height} for "
                f"{self.width}x{self.height} RGB"
            )
        object.__setattr__(
            self, "data", _readonly(data.reshape(self.height, self.width, 3))
        )

    @classmethod
    def filled(
        cls, width: int, height: int, rgb: Tuple[int, int, int] = (0, 0, 0)
    ) -> "ColorImage":
        """Return a uniform image."""
        data = np.empty((height, width, 3), dtype=np.uint8)
        data[:, :] = rgb
        return cls(width, height, data)

    def __eq__(self, other: object) -> bool:
        """Compare dimensions and pixels."""
        if not isinstance(other, ColorImage):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera model in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        """Validate on construction."""
        self.validate()

    def validate(self) -> None:
        """Check focal lengths, principal point and size.

        Raises:
            InvalidIntrinsicsError: If any value is out of range.
        """
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsicsError(
                f"Focal lengths must be positive, got fx={self.fx} "
                f"fy={self.fy}"
            )
        if self.width < 1 or self.height < 1:
            raise InvalidIntrinsicsError(
                f"Invalid size {self.width}x{self.height}"
            )
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidIntrinsicsError(
                f"Principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height}"
            )

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Return the same camera sampled at another resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=width,
            height=height,
        )

    def unproject(
        self,
        u: npt.ArrayLike,
        v: npt.ArrayLike,
        depth_m: npt.ArrayLike,
    ) -> FloatArray:
        """Lift pixels at the given depths to camera-space points.

        Args:
            u (array): Pixel columns.
            v (array): Pixel rows.
            depth_m (array): Distance along the viewing axis in meters.

        Returns:
            array: ``(N, 3)`` points; z is negative in front of the camera.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.asarray(depth_m, dtype=np.float64)
        x = (u - self.cx) * d / self.fx
        y = -(v - self.cy) * d / self.fy
        return np.stack([x, y, -d], axis=-1)

    def project(self, points: npt.ArrayLike) -> Tuple[FloatArray, FloatArray]:
        """Project camera-space points to pixel coordinates.

        Args:
            points (array): ``(N, 3)`` points in camera space.

        Returns:
            tuple: ``(uv, depth_m)`` with ``uv`` of shape ``(N, 2)``.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        depth = -p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.cx + self.fx * p[:, 0] / depth
            v = self.cy - self.fy * p[:, 1] / depth
        return np.stack([u, v], axis=-1), depth


def intrinsics_for(
    width: int, height: int, hfov_degrees: float
) -> CameraIntrinsics:
    """Build square-pixel intrinsics from a horizontal field of view."""
    f = (width / 2.0) / math.tan(math.radians(hfov_degrees) / 2.0)
    return CameraIntrinsics(
        fx=f,
        fy=f,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
    )


def quat_multiply(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product ``a * b`` of (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_normalize(q: Quaternion) -> Quaternion:
    """Scale a quaternion to unit length."""
    n = math.sqrt(sum(c * c for c in q))
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def quat_to_matrix(q: Quaternion) -> FloatArray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quat_from_matrix(m: npt.ArrayLike) -> Quaternion:
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    r = np.asarray(m, dtype=np.float64)
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2
        q = (
            0.25 * s,
            (r[2, 1] - r[1, 2]) / s,
            (r[0, 2] - r[2, 0]) / s,
            (r[1, 0] - r[0, 1]) / s,
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = (
            (r[2, 1] - r[1, 2]) / s,
            0.25 * s,
            (r[0, 1] + r[1, 0]) / s,
            (r[0, 2] + r[2, 0]) / s,
        )
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = (
            (r[0, 2] - r[2, 0]) / s,
            (r[0, 1] + r[1, 0]) / s,
            0.25 * s,
            (r[1, 2] + r[2, 1]) / s,
        )
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = (
            (r[1, 0] - r[0, 1]) / s,
            (r[0, 2] + r[2, 0]) / s,
            (r[1, 2] + r[2, 1]) / s,
            0.25 * s,
        )
    return quat_normalize(tuple(float(c) for c in q))  # type: ignore[arg-type]


def quat_from_euler_yxz(yaw: float, pitch: float, roll: float) -> Quaternion:
    """Compose yaw about y, then pitch about x, then roll about z."""
    qy = (math.cos(yaw / 2), 0.0, math.sin(yaw / 2), 0.0)
    qx = (math.cos(pitch / 2), math.sin(pitch / 2), 0.0, 0.0)
    qz = (math.cos(roll / 2), 0.0, 0.0, math.sin(roll / 2))
    return quat_multiply(quat_multiply(qy, qx), qz)


def quat_to_euler_yxz(rotation: Quaternion) -> Tuple[float, float, float]:
    """Decompose a unit quaternion into Y-X-Z (yaw, pitch, roll) radians.

    At pitch = +-pi/2 the roll is fixed to 0 and the combined angle is
    folded into yaw.

    Args:
        rotation (tuple): Unit quaternion (w, x, y, z).

    Returns:
        tuple: ``(yaw, pitch, roll)`` in radians.

    Example:
        >>> quat_to_euler_yxz((1.0, 0.0, 0.0, 0.0))
        (0.0, 0.0, 0.0)
    """
    w, x, y, z = rotation
    r00 = 1 - 2 * (y * y + z * z)
    r02 = 2 * (x * z + w * y)
    r10 = 2 * (x * y + w * z)
    r11 = 1 - 2 * (x * x + z * z)
    r12 = 2 * (y * z - w * x)
    r20 = 2 * (x * z - w * y)
    r22 = 1 - 2 * (x * x + y * y)

    cos_pitch = math.hypot(r10, r11)
    pitch = math.atan2(0.0 - r12, cos_pitch)
    if cos_pitch < GIMBAL_TOLERANCE:
        return math.atan2(-r20, r00), pitch, 0.0
    return math.atan2(r02, r22), pitch, math.atan2(r10, r11)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates into a parent frame."""

    rotation: Quaternion = (1.0, 0.0, 0.0, 0.0)
    translation: Vector3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        """Normalize the tuples and validate the rotation."""
        object.__setattr__(
            self, "rotation", tuple(float(c) for c in self.rotation)
        )
        object.__setattr__(
            self, "translation", tuple(float(c) for c in self.translation)
        )
        self.validate()

    def validate(self) -> None:
        """Check the rotation is a unit quaternion.

        Raises:
            InvalidPoseError: If the quaternion norm is off by more than 1e-9.
        """
        if len(self.rotation) != 4 or len(self.translation) != 3:
            raise InvalidPoseError("Pose needs 4 rotation and 3 translation")
        norm = math.sqrt(sum(c * c for c in self.rotation))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise InvalidPoseError(f"Rotation norm {norm!r} is not 1")

    @classmethod
    def identity(cls) -> "Pose":
        """The identity transform."""
        return cls()

    @classmethod
    def from_euler_yxz(
        cls,
        yaw: float,
        pitch: float = 0.0,
        roll: float = 0.0,
        translation: Vector3 = (0.0, 0.0, 0.0),
    ) -> "Pose":
        """Build a pose from Y-X-Z Euler angles and a translation."""
        return cls(quat_from_euler_yxz(yaw, pitch, roll), translation)

    @classmethod
    def from_matrix(cls, matrix: npt.ArrayLike) -> "Pose":
        """Build a pose from a 4x4 homogeneous matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        t = m[:3, 3]
        return cls(
            quat_from_matrix(m[:3, :3]),
            (float(t[0]), float(t[1]), float(t[2])),
        )

    def euler_yxz(self) -> Tuple[float, float, float]:
        """(yaw, pitch, roll) of the rotation."""
        return quat_to_euler_yxz(self.rotation)

    def rotation_matrix(self) -> FloatArray:
        """3x3 rotation matrix."""
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> FloatArray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self * other``: apply ``other`` first, then ``self``."""
        rotated = self.rotation_matrix() @ np.asarray(other.translation)
        t = rotated + np.asarray(self.translation)
        return Pose(
            quat_normalize(quat_multiply(self.rotation, other.rotation)),
            (float(t[0]), float(t[1]), float(t[2])),
        )

    def inverse(self) -> "Pose":
        """Inverse transform."""
        w, x, y, z = self.rotation
        conj = (w, -x, -y, -z)
        t = -(quat_to_matrix(conj) @ np.asarray(self.translation))
        return Pose(conj, (float(t[0]), float(t[1]), float(t[2])))

    def transform_points(self, points: npt.ArrayLike) -> FloatArray:
        """Apply the transform to ``(N, 3)`` points."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return p @ self.rotation_matrix().T + np.asarray(self.translation)

    def position(self) -> FloatArray:
        """Origin of the local frame in the parent frame."""
        return np.asarray(self.translation, dtype=np.float64)


@dataclass(frozen=True)
class FloorPlane:
    """Plane ``normal . p = distance`` with an upward unit normal."""

    normal: Vector3 = (0.0, 1.0, 0.0)
    distance: float = 0.0

    def __post_init__(self) -> None:
        """Normalize the tuple and validate."""
        object.__setattr__(self, "normal", tuple(float(c) for c in self.normal))
        object.__setattr__(self, "distance", float(self.distance))
        self.validate()

    def validate(self) -> None:
        """Check the normal is unit length and points up.

        Raises:
            InvalidPlaneError: If the normal is not unit or faces down.
        """
        norm = math.sqrt(sum(c * c for c in self.normal))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise InvalidPlaneError(f"Floor normal norm {norm!r} is not 1")
        if self.normal[1] <= 0:
            raise InvalidPlaneError("Floor normal must have positive y")

    @classmethod
    def from_coefficients(
        cls, normal: npt.ArrayLike, distance: float
    ) -> "FloorPlane":
        """Normalize an arbitrary plane and flip it to face up."""
        n = np.asarray(normal, dtype=np.float64)
        length = float(np.linalg.norm(n))
        n = n / length
        d = float(distance) / length
        if n[1] < 0:
            n, d = -n, -d
        return cls((float(n[0]), float(n[1]), float(n[2])), d)

    def signed_distance(self, points: npt.ArrayLike) -> FloatArray:
        """Height of each point above the plane."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return p @ np.asarray(self.normal) - self.distance


@dataclass(frozen=True)
class RgbdFrame:
    """One time-stamped color and depth pair with its camera metadata."""

    frame_id: int
    timestamp_micros: int
    color: ColorImage
    depth: DepthImage
    depth_intrinsics: CameraIntrinsics
    color_intrinsics: CameraIntrinsics
    depth_to_color: Pose


def validate_frame(
    frame: RgbdFrame, previous_frame_id: Optional[int] = None
) -> RgbdFrame:
    """Check every frame invariant and hand the frame back unchanged.

    Args:
        frame (RgbdFrame): The frame to check.
        previous_frame_id (int, optional): Last frame id seen on the stream.

    Returns:
        RgbdFrame: The same frame object.

    Raises:
        DimensionMismatchError: If an image disagrees with its intrinsics.
        FrameOrderError: If the frame id does not increase.
    """
    frame.depth_intrinsics.validate()
    frame.color_intrinsics.validate()
    frame.depth_to_color.validate()
    pairs = (
        ("depth", frame.depth, frame.depth_intrinsics),
        ("color", frame.color, frame.color_intrinsics),
    )
    for name, image, intr in pairs:
        if (image.width, image.height) != (intr.width, intr.height):
            raise DimensionMismatchError(
                f"{name} image is {image.width}x{image.height} but its "
                f"intrinsics describe {intr.width}x{intr.height}"
            )
    if previous_frame_id is not None and frame.frame_id <= previous_frame_id:
        raise FrameOrderError(
            f"Frame id {frame.frame_id} does not follow {previous_frame_id}"
        )
    return frame
