"""Spatial preprocessing and placement of captured participants."""

import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, List, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from rgbd_relay.constants import FLOOR_MEDIAN_WINDOW
from rgbd_relay.errors import (
    ConfigError,
    DegenerateDirectionError,
    InvalidRangeError,
    IoFailureError,
    MissingFirstTransmitterError,
    NoFloorFoundError,
)
from rgbd_relay.model import (
    CameraIntrinsics,
    DepthImage,
    FloatArray,
    FloorPlane,
    Pose,
    RgbdFrame,
    quat_normalize,
)


logger = logging.getLogger(__name__)

MIN_FLOOR_INLIERS = 100
IDENTITY_TOLERANCE = 1e-9


def remove_background(
    depth: DepthImage, near_mm: int, far_mm: int
) -> DepthImage:
    """Invalidate pixels outside ``[near_mm, far_mm]``.

    Args:
        depth (DepthImage): Input depth.
        near_mm (int): Closest depth kept.
        far_mm (int): Farthest depth kept.

    Returns:
        DepthImage: Copy with out-of-range pixels set to 0.

    Raises:
        InvalidRangeError: If ``near_mm >= far_mm``.
    """
    if near_mm >= far_mm:
        raise InvalidRangeError(
            f"Background range needs near < far, got [{near_mm}, {far_mm}]"
        )
    data = depth.data
    keep = (data >= near_mm) & (data <= far_mm)
    return DepthImage(depth.width, depth.height, np.where(keep, data, 0))


def depth_points(
    depth: DepthImage, intr: CameraIntrinsics
) -> Tuple[FloatArray, npt.NDArray[np.int64]]:
    """Unproject every valid pixel.

    Returns:
        tuple: ``(points, flat_indices)`` with points in camera meters.
    """
    flat = np.flatnonzero(depth.data.ravel())
    v, u = np.divmod(flat, depth.width)
    d = depth.data.ravel()[flat].astype(np.float64) / 1000.0
    return intr.unproject(u, v, d), flat.astype(np.int64)


def register_depth_to_color(frame: RgbdFrame) -> DepthImage:
    """Map depth pixels into the color camera at depth resolution.

    Nearest depth wins when several pixels land in one cell; cells nothing
    maps to stay 0.

    Args:
        frame (RgbdFrame): Frame with both cameras and their extrinsics.

    Returns:
        DepthImage: Depth as seen from the color camera.
    """
    depth = frame.depth
    points, _ = depth_points(depth, frame.depth_intrinsics)
    target = frame.color_intrinsics.scaled(depth.width, depth.height)
    uv, z = target.project(frame.depth_to_color.transform_points(points))
    u = np.rint(uv[:, 0])
    v = np.rint(uv[:, 1])
    mm = np.rint(z * 1000.0)
    ok = (
        (z > 0)
        & (mm >= 1)
        & (mm <= 0xFFFF)
        & (u >= 0)
        & (u < depth.width)
        & (v >= 0)
        & (v < depth.height)
    )
    cell = v[ok].astype(np.int64) * depth.width + u[ok].astype(np.int64)
    mm = mm[ok].astype(np.int64)
    order = np.lexsort((mm, cell))
    cell_sorted = cell[order]
    unique_cells, first = np.unique(cell_sorted, return_index=True)
    out = np.zeros(depth.width * depth.height, dtype=np.uint16)
    out[unique_cells] = mm[order][first]
    return DepthImage(depth.width, depth.height, out)


@dataclass(frozen=True)
class RansacParams:
    """Floor search settings."""

    iterations: int = 200
    inlier_distance_meters: float = 0.02
    max_normal_angle_from_up_radians: float = 0.524
    seed: int = 0
    max_points: int = 5000

    def __post_init__(self) -> None:
        """Validate the parameters."""
        if self.iterations < 1:
            raise ConfigError("RANSAC needs at least one iteration")
        if not self.inlier_distance_meters > 0:
            raise ConfigError("inlier_distance_meters must be positive")


def _fit_plane(points: FloatArray) -> Tuple[FloatArray, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    if normal[1] < 0:
        normal = -normal
    return normal, float(normal @ centroid)


def extract_floor_from_points(
    points: npt.ArrayLike, params: RansacParams
) -> FloorPlane:
    """Find the dominant up-facing plane in a point set.

    Args:
        points (array): ``(N, 3)`` camera-space points in meters.
        params (RansacParams): Search settings.

    Returns:
        FloorPlane: Least-squares refit of the best RANSAC plane.

    Raises:
        NoFloorFoundError: If no gated plane reaches 100 inliers.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise NoFloorFoundError(f"Only {pts.shape[0]} points available")
    rng = np.random.default_rng(params.seed)
    scored = pts
    if pts.shape[0] > params.max_points:
        scored = pts[rng.choice(pts.shape[0], params.max_points, replace=False)]

    sample = rng.integers(0, scored.shape[0], size=(params.iterations, 3))
    a = scored[sample[:, 0]]
    normals = np.cross(scored[sample[:, 1]] - a, scored[sample[:, 2]] - a)
    lengths = np.linalg.norm(normals, axis=1)
    usable = lengths > 1e-12
    normals[usable] /= lengths[usable, None]
    normals[normals[:, 1] < 0] *= -1
    usable &= normals[:, 1] >= math.cos(params.max_normal_angle_from_up_radians)
    if not usable.any():
        raise NoFloorFoundError("No sampled plane faces up")

    normals = normals[usable]
    offsets = np.einsum("ij,ij->i", normals, a[usable])
    residual = np.abs(scored @ normals.T - offsets)
    counts = (residual <= params.inlier_distance_meters).sum(axis=0)
    best = int(np.argmax(counts))

    inliers = (
        np.abs(pts @ normals[best] - offsets[best])
        <= params.inlier_distance_meters
    )
    found = int(inliers.sum())
    if found < MIN_FLOOR_INLIERS:
        raise NoFloorFoundError(
            f"Best floor candidate has {found} inliers, "
            f"{MIN_FLOOR_INLIERS} required"
        )
    normal, distance = _fit_plane(pts[inliers])
    logger.debug(
        "Floor refit over %d inliers: normal=%s distance=%.4f",
        found,
        np.round(normal, 4),
        distance,
    )
    return FloorPlane.from_coefficients(normal, distance)


def extract_floor(
    depth: DepthImage, intr: CameraIntrinsics, params: RansacParams
) -> FloorPlane:
    """Extract the floor plane from a depth image.

    Args:
        depth (DepthImage): Depth in the geometry described by ``intr``.
        intr (CameraIntrinsics): Camera model matching ``depth``.
        params (RansacParams): Search settings.

    Returns:
        FloorPlane: Floor in camera coordinates.
    """
    points, _ = depth_points(depth, intr)
    return extract_floor_from_points(points, params)


def level_rotation(floor: FloorPlane) -> Pose:
    """Smallest rotation about the camera origin taking the floor normal to +y.

    After levelling, floor points satisfy ``y == floor.distance``.
    """
    nx, ny, nz = floor.normal
    return Pose(quat_normalize((1.0 + ny, -nz, 0.0, nx)))


def match_floor(transmitter_floor: FloorPlane, current_placement: Pose) -> Pose:
    """Constrain a placement to yaw only and drop its floor onto y = 0.

    The returned pose applies to levelled capture coordinates (see
    :func:`level_rotation`); x and z translation and yaw are kept.

    Args:
        transmitter_floor (FloorPlane): Floor in capture coordinates.
        current_placement (Pose): Placement chosen by the viewer.

    Returns:
        Pose: Placement with zero pitch and roll.

    Example:
        >>> match_floor(FloorPlane((0.0, 1.0, 0.0), -1.4), Pose()).translation
        (0.0, 1.4, 0.0)
    """
    yaw, _, _ = current_placement.euler_yxz()
    x, _, z = current_placement.translation
    height = -transmitter_floor.distance
    return Pose.from_euler_yxz(yaw, 0.0, 0.0, (x, height, z))


def place_capture(floor: FloorPlane, placement: Pose) -> Pose:
    """World pose of a capturing camera once floors are matched."""
    return match_floor(floor, placement).compose(level_rotation(floor))


def set_interlocutor_distance(placement: Pose, distance_meters: float) -> Pose:
    """Slide the remote anchor to a fixed horizontal distance from the viewer.

    Args:
        placement (Pose): Anchor placement relative to the viewer origin.
        distance_meters (float): Requested horizontal distance.

    Returns:
        Pose: Placement with x and z rescaled; y and rotation unchanged.

    Raises:
        ValueError: If the distance is not positive.
        DegenerateDirectionError: If the anchor is above or below the viewer.
    """
    if not distance_meters > 0:
        raise ValueError(f"Distance must be positive, got {distance_meters}")
    x, y, z = placement.translation
    current = math.hypot(x, z)
    if current < 1e-12:
        raise DegenerateDirectionError(
            "Anchor is horizontally coincident with the viewer"
        )
    scale = distance_meters / current
    return Pose(placement.rotation, (x * scale, y, z * scale))


@dataclass(frozen=True)
class CalibrationEntry:
    """Pose of one transmitter relative to the first transmitter."""

    transmitter_id: int
    relative_pose: Pose


def _is_identity(pose: Pose) -> bool:
    w = abs(pose.rotation[0])
    return abs(w - 1.0) <= IDENTITY_TOLERANCE and all(
        abs(c) <= IDENTITY_TOLERANCE for c in pose.translation
    )


def compose_calibration(
    entries: Sequence[CalibrationEntry], first_placement: Pose
) -> Dict[int, Pose]:
    """World pose of every transmitter given the first one's placement.

    Args:
        entries (list): Calibration entries, first transmitter first.
        first_placement (Pose): World placement of the first transmitter.

    Returns:
        dict: Transmitter id to world pose.

    Raises:
        MissingFirstTransmitterError: If the first entry is not identity.
    """
    if not entries or not _is_identity(entries[0].relative_pose):
        raise MissingFirstTransmitterError(
            "Calibration must start with the first transmitter at identity"
        )
    return {
        entry.transmitter_id: first_placement.compose(entry.relative_pose)
        for entry in entries
    }


def write_calibration(
    path: Union[str, Path], entries: Sequence[CalibrationEntry]
) -> None:
    """Write entries as ``id qw qx qy qz tx ty tz`` lines.

    Raises:
        IoFailureError: If the file cannot be written.
    """
    lines = ["# id qw qx qy qz tx ty tz"]
    for entry in entries:
        values = entry.relative_pose.rotation + entry.relative_pose.translation
        lines.append(
            f"{entry.transmitter_id} " + " ".join(f"{v:.17g}" for v in values)
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"Cannot write calibration {path}: {exc}") from exc


def read_calibration(path: Union[str, Path]) -> List[CalibrationEntry]:
    """Read a calibration file written by :func:`write_calibration`.

    Raises:
        IoFailureError: If the file cannot be read.
        ConfigError: If a line is malformed.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"Cannot read calibration {path}: {exc}") from exc
    entries = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 8:
            raise ConfigError(
                f"{path}:{number}: expected 8 fields, got {len(fields)}"
            )
        try:
            values = [float(f) for f in fields[1:]]
            pose = Pose(
                (values[0], values[1], values[2], values[3]),
                (values[4], values[5], values[6]),
            )
            entries.append(CalibrationEntry(int(fields[0]), pose))
        except ValueError as exc:
            raise ConfigError(f"{path}:{number}: {exc}") from exc
    return entries


class FloorSmoother:
    """Component-wise median over the most recent floors."""

    def __init__(self, window: int = FLOOR_MEDIAN_WINDOW) -> None:
        """Keep up to ``window`` floors."""
        self._history: Deque[Tuple[float, float, float, float]] = deque(
            maxlen=window
        )

    def __len__(self) -> int:
        """Number of floors held."""
        return len(self._history)

    def update(self, floor: FloorPlane) -> FloorPlane:
        """Add a floor and return the smoothed estimate."""
        self._history.append((*floor.normal, floor.distance))
        median = np.median(np.asarray(self._history), axis=0)
        return FloorPlane.from_coefficients(median[:3], float(median[3]))


def look_at(position: Sequence[float], target: Sequence[float]) -> Pose:
    """Camera pose at ``position`` whose -z axis points at ``target``.

    Raises:
        DegenerateDirectionError: If the two points coincide.
    """
    forward = np.asarray(target, dtype=np.float64) - np.asarray(
        position, dtype=np.float64
    )
    if float(np.linalg.norm(forward)) < 1e-12:
        raise DegenerateDirectionError("Camera position equals its target")
    yaw = math.atan2(-forward[0], -forward[2])
    pitch = math.atan2(forward[1], math.hypot(forward[0], forward[2]))
    x, y, z = (float(c) for c in position)
    return Pose.from_euler_yxz(yaw, pitch, 0.0, (x, y, z))
