"""Synthetic RGBD capture: a squatting capsule figure above a checker floor.

Stands in for camera drivers. Frames are ray traced analytically, so the
floor plane and camera poses are known exactly. Frames can be written to
and read back from ``.npz`` files.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np

from rgbd_relay.constants import (
    COLOR_HFOV_DEGREES,
    DEPTH_HFOV_DEGREES,
    FRAME_INTERVAL_MICROS,
    RESOLUTION_PRESETS,
)
from rgbd_relay.errors import ConfigError, IoFailureError
from rgbd_relay.geometry import CalibrationEntry, look_at, write_calibration
from rgbd_relay.model import (
    CameraIntrinsics,
    ColorImage,
    DepthImage,
    FloatArray,
    FloorPlane,
    Pose,
    RgbdFrame,
    intrinsics_for,
)


logger = logging.getLogger(__name__)

FAR_MM = 6000
FIGURE_CENTER = (0.0, 0.9, -2.5)
SQUAT_PERIOD_FRAMES = 60
SQUAT_DEPTH = 0.3
STANDING_HIP = 0.95
ANKLE_HEIGHT = 0.08
LEG_SEGMENT = 0.45
COLOR_OFFSET = 0.032

BACKGROUND = (20, 24, 32)
FLOOR_LIGHT = (150, 150, 150)
FLOOR_DARK = (110, 110, 110)
CHECKER_SIZE = 0.5


@dataclass(frozen=True)
class Capsule:
    """Segment ``a``-``b`` swept by a sphere of ``radius``."""

    a: Tuple[float, float, float]
    b: Tuple[float, float, float]
    radius: float
    color: Tuple[int, int, int]


@dataclass(frozen=True)
class SceneCamera:
    """A depth and color camera pair with world poses."""

    session_id: int
    depth_pose: Pose
    color_pose: Pose
    depth_intrinsics: CameraIntrinsics
    color_intrinsics: CameraIntrinsics

    @property
    def depth_to_color(self) -> Pose:
        """Extrinsics from depth camera to color camera coordinates."""
        return self.color_pose.inverse().compose(self.depth_pose)

    def floor(self) -> FloorPlane:
        """Ground truth floor in color camera coordinates."""
        r = self.color_pose.rotation_matrix()
        return FloorPlane.from_coefficients(
            r[1, :], -self.color_pose.translation[1]
        )


@dataclass(frozen=True)
class SceneConfig:
    """What :func:`gen_scene` renders."""

    preset: str = "study"
    cameras: int = 1
    frame_count: int = 300
    seed: int = 0
    noise_mm: float = 0.0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.preset not in RESOLUTION_PRESETS:
            raise ConfigError(
                f"Unknown preset {self.preset!r}, expected one of "
                f"{sorted(RESOLUTION_PRESETS)}"
            )
        if self.cameras not in (1, 2):
            raise ConfigError(f"cameras must be 1 or 2, got {self.cameras}")
        if self.frame_count < 1:
            raise ConfigError("frame_count must be at least 1")
        if self.noise_mm < 0:
            raise ConfigError("noise_mm must be non-negative")


def scene_cameras(preset: str = "study", cameras: int = 1) -> List[SceneCamera]:
    """Cameras of the synthetic room.

    The first camera faces the figure from 2.5 m away; the second stands
    to the figure's side at a 90 degree yaw to the first.
    """
    (cw, ch), (dw, dh) = RESOLUTION_PRESETS[preset]
    depth_intr = intrinsics_for(dw, dh, DEPTH_HFOV_DEGREES)
    color_intr = intrinsics_for(cw, ch, COLOR_HFOV_DEGREES)
    x, y, z = FIGURE_CENTER
    positions = [(0.0, 1.2, 0.0), (x + 2.5, 1.2, z)]
    out = []
    for index, position in enumerate(positions[:cameras]):
        depth_pose = look_at(position, FIGURE_CENTER)
        offset = depth_pose.rotation_matrix() @ np.array([COLOR_OFFSET, 0, 0])
        p = depth_pose.position() + offset
        color_pose = Pose(
            depth_pose.rotation, (float(p[0]), float(p[1]), float(p[2]))
        )
        out.append(
            SceneCamera(
                session_id=index + 1,
                depth_pose=depth_pose,
                color_pose=color_pose,
                depth_intrinsics=depth_intr,
                color_intrinsics=color_intr,
            )
        )
    return out


def figure_at(frame_id: int) -> List[Capsule]:
    """Body capsules of the figure at a frame.

    The hips follow a cosine squat; each leg is a two-link chain solved
    so the ankle stays planted and the knee bends toward the first camera.
    """
    cycle = (frame_id % SQUAT_PERIOD_FRAMES) / SQUAT_PERIOD_FRAMES
    squat = 0.5 * (1.0 - math.cos(2.0 * math.pi * cycle))
    cx, _, cz = FIGURE_CENTER
    hip = STANDING_HIP - SQUAT_DEPTH * squat
    skin = (230, 190, 160)
    shirt = (200, 60, 60)
    pants = (40, 60, 160)
    shoe = (30, 30, 30)
    parts = [
        Capsule((cx, hip + 0.05, cz), (cx, hip + 0.5, cz), 0.15, shirt),
        Capsule((cx, hip + 0.72, cz), (cx, hip + 0.72, cz), 0.11, skin),
    ]
    reach = 1.2 * squat
    for side in (-1.0, 1.0):
        shoulder = (cx + 0.22 * side, hip + 0.45, cz)
        hand = (
            shoulder[0],
            shoulder[1] - 0.6 * math.cos(reach),
            cz + 0.6 * math.sin(reach),
        )
        parts.append(Capsule(shoulder, hand, 0.05, skin))

        hip_joint = (cx + 0.1 * side, hip, cz)
        ankle = (cx + 0.1 * side, ANKLE_HEIGHT, cz)
        span = hip - ANKLE_HEIGHT
        bend = math.sqrt(max(LEG_SEGMENT**2 - (span / 2.0) ** 2, 0.0))
        knee = (hip_joint[0], (hip + ANKLE_HEIGHT) / 2.0, cz + bend)
        parts.append(Capsule(hip_joint, knee, 0.07, pants))
        parts.append(Capsule(knee, ankle, 0.06, pants))
        toe = (ankle[0], 0.05, cz + 0.15)
        parts.append(Capsule(ankle, toe, 0.05, shoe))
    return parts


def intersect_capsule(
    origin: FloatArray, directions: FloatArray, capsule: Capsule
) -> FloatArray:
    """Ray distances to a capsule, ``inf`` on a miss.

    Args:
        origin (array): Ray origin shared by every ray.
        directions (array): ``(N, 3)`` unit directions.
        capsule (Capsule): Target.

    Returns:
        array: ``(N,)`` hit distances.
    """
    pa = np.asarray(capsule.a)
    pb = np.asarray(capsule.b)
    r = capsule.radius
    ba = pb - pa
    oa = origin - pa
    baba = float(ba @ ba)
    bard = directions @ ba
    baoa = float(ba @ oa)
    rdoa = directions @ oa
    oaoa = float(oa @ oa)
    a = baba - bard * bard
    b = baba * rdoa - baoa * bard
    c = baba * oaoa - baoa * baoa - r * r * baba
    h = b * b - a * c
    t = np.full(directions.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = (-b - np.sqrt(h)) / a
        along = baoa + body * bard
        hit_body = (h >= 0) & (a > 1e-12) & (along > 0) & (along < baba)
        t[hit_body] = body[hit_body]
        cap = ~hit_body
        below = cap & ~(along > 0)
        oc = np.where(below[:, None], oa, origin - pb)
        bc = np.einsum("ij,ij->i", directions, oc)
        cc = np.einsum("ij,ij->i", oc, oc) - r * r
        hc = bc * bc - cc
        cap_t = -bc - np.sqrt(hc)
    hit_cap = cap & (hc > 0) & (cap_t > 0)
    t[hit_cap] = cap_t[hit_cap]
    t[t <= 0] = np.inf
    return t


class SyntheticScene:
    """Ray tracer for the configured cameras.

    Floor hits are static per camera and cached; only rays passing near
    the figure are traced against its capsules.
    """

    def __init__(self, config: SceneConfig) -> None:
        """Set up cameras and per-camera ray caches."""
        self.config = config
        self.cameras = scene_cameras(config.preset, config.cameras)
        self._cache: Dict[Tuple[int, str], Tuple[FloatArray, ...]] = {}

    def _rays(
        self, pose: Pose, intr: CameraIntrinsics
    ) -> Tuple[FloatArray, FloatArray, FloatArray]:
        v, u = np.divmod(np.arange(intr.width * intr.height), intr.width)
        local = np.stack(
            [
                (u - intr.cx) / intr.fx,
                -(v - intr.cy) / intr.fy,
                -np.ones(u.size),
            ],
            axis=1,
        )
        norms = np.linalg.norm(local, axis=1)
        world = (local / norms[:, None]) @ pose.rotation_matrix().T
        return pose.position(), world, norms

    def _static(
        self, index: int, kind: str, pose: Pose, intr: CameraIntrinsics
    ) -> Tuple[FloatArray, ...]:
        key = (index, kind)
        if key not in self._cache:
            origin, dirs, norms = self._rays(pose, intr)
            with np.errstate(divide="ignore"):
                t = np.where(dirs[:, 1] < 0, -origin[1] / dirs[:, 1], np.inf)
            t[t / norms * 1000.0 > FAR_MM] = np.inf
            hit = np.isfinite(t)
            points = origin + dirs * np.where(hit, t, 0.0)[:, None]
            checker = (
                np.floor(points[:, 0] / CHECKER_SIZE)
                + np.floor(points[:, 2] / CHECKER_SIZE)
            ) % 2
            colors = np.empty((t.size, 3))
            colors[:] = BACKGROUND
            colors[hit & (checker == 0)] = FLOOR_LIGHT
            colors[hit & (checker == 1)] = FLOOR_DARK
            self._cache[key] = (origin, dirs, norms, t, colors)
        return self._cache[key]

    def _trace(
        self,
        index: int,
        kind: str,
        pose: Pose,
        intr: CameraIntrinsics,
        parts: List[Capsule],
    ) -> Tuple[FloatArray, FloatArray, FloatArray]:
        origin, dirs, norms, floor_t, floor_colors = self._static(
            index, kind, pose, intr
        )
        t = floor_t.copy()
        colors = floor_colors.copy()
        ends = np.array([p.a for p in parts] + [p.b for p in parts])
        center = ends.mean(axis=0)
        radius = float(
            np.max(np.linalg.norm(ends - center, axis=1))
            + max(p.radius for p in parts)
        )
        to_center = center - origin
        along = dirs @ to_center
        miss = np.linalg.norm(to_center - dirs * along[:, None], axis=1)
        near = np.flatnonzero(miss <= radius)
        for part in parts:
            hit_t = intersect_capsule(origin, dirs[near], part)
            closer = hit_t < t[near]
            idx = near[closer]
            t[idx] = hit_t[closer]
            colors[idx] = part.color
        return t, colors, norms

    def render(self, camera_index: int, frame_id: int) -> RgbdFrame:
        """Capture one frame from one camera."""
        cam = self.cameras[camera_index]
        parts = figure_at(frame_id)
        t, _, norms = self._trace(
            camera_index, "depth", cam.depth_pose, cam.depth_intrinsics, parts
        )
        depth_m = t / norms
        mm = np.where(np.isfinite(depth_m), np.rint(depth_m * 1000.0), 0.0)
        if self.config.noise_mm > 0:
            rng = np.random.default_rng(
                (self.config.seed, camera_index, frame_id)
            )
            noise = rng.normal(0.0, self.config.noise_mm, mm.size)
            mm = np.where(mm > 0, np.rint(mm + noise), 0.0)
        mm[(mm < 0) | (mm > FAR_MM)] = 0
        _, colors, _ = self._trace(
            camera_index, "color", cam.color_pose, cam.color_intrinsics, parts
        )
        di, ci = cam.depth_intrinsics, cam.color_intrinsics
        return RgbdFrame(
            frame_id=frame_id,
            timestamp_micros=frame_id * FRAME_INTERVAL_MICROS,
            color=ColorImage(ci.width, ci.height, colors.astype(np.uint8)),
            depth=DepthImage(di.width, di.height, mm.astype(np.uint16)),
            depth_intrinsics=di,
            color_intrinsics=ci,
            depth_to_color=cam.depth_to_color,
        )

    def frames(self, camera_index: int) -> Iterator[RgbdFrame]:
        """Every configured frame of one camera."""
        for frame_id in range(self.config.frame_count):
            yield self.render(camera_index, frame_id)

    def calibration(self) -> List[CalibrationEntry]:
        """Color camera poses relative to the first color camera."""
        first = self.cameras[0].color_pose.inverse()
        return [
            CalibrationEntry(
                cam.session_id,
                Pose() if i == 0 else first.compose(cam.color_pose),
            )
            for i, cam in enumerate(self.cameras)
        ]


def gen_scene(config: SceneConfig) -> Dict[int, Iterator[RgbdFrame]]:
    """Lazy frame streams keyed by session id, one per camera."""
    scene = SyntheticScene(config)
    return {
        cam.session_id: scene.frames(index)
        for index, cam in enumerate(scene.cameras)
    }


def save_frame(frame: RgbdFrame, path: Union[str, Path]) -> None:
    """Write a frame as a compressed ``.npz`` file.

    Raises:
        IoFailureError: If the file cannot be written.
    """
    di, ci = frame.depth_intrinsics, frame.color_intrinsics
    pose = frame.depth_to_color
    try:
        np.savez_compressed(
            path,
            frame_id=frame.frame_id,
            timestamp_micros=frame.timestamp_micros,
            color=frame.color.data,
            depth=frame.depth.data,
            depth_intrinsics=[di.fx, di.fy, di.cx, di.cy],
            color_intrinsics=[ci.fx, ci.fy, ci.cx, ci.cy],
            depth_to_color=list(pose.rotation) + list(pose.translation),
        )
    except OSError as exc:
        raise IoFailureError(f"Cannot write frame {path}: {exc}") from exc


def load_frame(path: Union[str, Path]) -> RgbdFrame:
    """Read a frame written by :func:`save_frame`.

    Raises:
        IoFailureError: If the file cannot be read or lacks a field.
    """
    try:
        with np.load(path) as data:
            color = data["color"]
            depth = data["depth"]
            d = [float(v) for v in data["depth_intrinsics"]]
            c = [float(v) for v in data["color_intrinsics"]]
            p = [float(v) for v in data["depth_to_color"]]
            frame_id = int(data["frame_id"])
            timestamp = int(data["timestamp_micros"])
    except (OSError, KeyError, ValueError) as exc:
        raise IoFailureError(f"Cannot read frame {path}: {exc}") from exc
    dh, dw = depth.shape
    ch, cw = color.shape[:2]
    return RgbdFrame(
        frame_id=frame_id,
        timestamp_micros=timestamp,
        color=ColorImage(cw, ch, color),
        depth=DepthImage(dw, dh, depth),
        depth_intrinsics=CameraIntrinsics(d[0], d[1], d[2], d[3], dw, dh),
        color_intrinsics=CameraIntrinsics(c[0], c[1], c[2], c[3], cw, ch),
        depth_to_color=Pose((p[0], p[1], p[2], p[3]), (p[4], p[5], p[6])),
    )


def camera_directory(root: Union[str, Path], session_id: int) -> Path:
    """Where the frames of one camera live under ``root``."""
    return Path(root) / f"camera{session_id}"


def write_scene(
    config: SceneConfig, output_dir: Union[str, Path]
) -> List[Path]:
    """Render every frame to disk plus a calibration file.

    Returns:
        list: The camera directories written.
    """
    scene = SyntheticScene(config)
    root = Path(output_dir)
    written = []
    for index, cam in enumerate(scene.cameras):
        directory = camera_directory(root, cam.session_id)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailureError(f"Cannot create {directory}: {exc}") from exc
        for frame in scene.frames(index):
            save_frame(frame, directory / f"frame_{frame.frame_id:05d}.npz")
        logger.info(
            "Wrote %d frames for camera %d to %s",
            config.frame_count,
            cam.session_id,
            directory,
        )
        written.append(directory)
    write_calibration(root / "calibration.txt", scene.calibration())
    return written


class FileFrameSource:
    """Frames of one camera read back from a directory of ``.npz`` files."""

    def __init__(self, directory: Union[str, Path]) -> None:
        """List the frame files.

        Raises:
            IoFailureError: If the directory holds no frames.
        """
        self.directory = Path(directory)
        self.paths = sorted(self.directory.glob("frame_*.npz"))
        if not self.paths:
            raise IoFailureError(f"No frame files in {self.directory}")

    def __len__(self) -> int:
        """Number of frames."""
        return len(self.paths)

    def __iter__(self) -> Iterator[RgbdFrame]:
        """Frames in file order."""
        return (load_frame(path) for path in self.paths)
