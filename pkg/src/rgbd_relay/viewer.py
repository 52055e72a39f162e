"""Receive side: reassembly, decoding, quad clouds and software rendering."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import (
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt

from rgbd_relay.color_codec import decode_color
from rgbd_relay.constants import (
    COLOR_HFOV_DEGREES,
    DEFAULT_ENLARGEMENT,
    FLOOR_MEDIAN_WINDOW,
    PACKET_TYPE_AUDIO,
    REASSEMBLY_HORIZON,
)
from rgbd_relay.depth_codec import DepthCodecConfig, DepthDecoder
from rgbd_relay.errors import (
    ConfigError,
    DimensionMismatchError,
    IoFailureError,
    RgbdRelayError,
)
from rgbd_relay.fec import DecoderWorkspace, FecPacket
from rgbd_relay.geometry import (
    CalibrationEntry,
    FloorSmoother,
    compose_calibration,
    place_capture,
)
from rgbd_relay.message import VideoMessage
from rgbd_relay.model import (
    CameraIntrinsics,
    ColorImage,
    DepthImage,
    FloatArray,
    FloorPlane,
    Pose,
    Vector3,
    intrinsics_for,
)


logger = logging.getLogger(__name__)

ORIENTATIONS = ("billboard", "yaw", "none")
MIN_PROJECTED_AREA = 1e-9
NEAR_PLANE_METERS = 1e-3
FRAGMENT_BATCH = 1 << 22
EDGE_EPSILON = 1e-9


# Reassembly


@dataclass(frozen=True)
class Pending:
    """More packets are needed."""


@dataclass(frozen=True)
class FrameReady:
    """A frame decoded out of the fountain code."""

    message: VideoMessage


@dataclass(frozen=True)
class Dropped:
    """A frame superseded by a newer completed frame."""

    frame_id: int


ReassemblyEvent = Union[Pending, FrameReady, Dropped]


class Reassembler:
    """Per-session packet collection with a real-time drop policy.

    Frames older than the newest completed frame are dropped and reported
    once, when one of their packets shows up. Workspaces are evicted on
    completion, on drop and once they fall ``horizon`` frames behind the
    newest packet.
    """

    def __init__(self, horizon: int = REASSEMBLY_HORIZON) -> None:
        """Start with no frames in progress."""
        self.horizon = horizon
        self.newest_completed: Optional[int] = None
        self.newest_seen: Optional[int] = None
        self.completed = 0
        self.dropped = 0
        self._workspaces: Dict[int, DecoderWorkspace] = {}
        self._settled: Set[int] = set()

    @property
    def in_progress(self) -> int:
        """Frames with at least one packet and no outcome yet."""
        return len(self._workspaces)

    def _prune(self, newest: int) -> None:
        oldest = newest - self.horizon
        for frame_id in [f for f in self._workspaces if f < oldest]:
            logger.debug("Frame %d fell behind the horizon", frame_id)
            del self._workspaces[frame_id]
        self._settled = {f for f in self._settled if f >= oldest}

    def reassemble(self, packet: FecPacket) -> ReassemblyEvent:
        """Feed one packet.

        Returns:
            Pending, FrameReady or Dropped.

        Raises:
            MalformedMessageError: If a decoded message does not parse.
            InconsistentHeaderError: If a packet contradicts its frame.
        """
        frame_id = packet.frame_id
        if frame_id in self._settled:
            return Pending()
        if self.newest_seen is not None and (
            frame_id < self.newest_seen - self.horizon
        ):
            return Pending()
        if self.newest_completed is not None and (
            frame_id < self.newest_completed
        ):
            self._workspaces.pop(frame_id, None)
            self._settled.add(frame_id)
            self.dropped += 1
            logger.debug("Frame %d arrived after a newer frame", frame_id)
            return Dropped(frame_id)

        if self.newest_seen is None or frame_id > self.newest_seen:
            self.newest_seen = frame_id
            self._prune(frame_id)
        workspace = self._workspaces.get(frame_id)
        if workspace is None:
            workspace = DecoderWorkspace.for_packet(packet)
            self._workspaces[frame_id] = workspace
        data = workspace.add(packet)
        if data is None:
            return Pending()

        del self._workspaces[frame_id]
        self._settled.add(frame_id)
        self.completed += 1
        self.newest_completed = frame_id
        for older in [f for f in self._workspaces if f < frame_id]:
            del self._workspaces[older]
        return FrameReady(VideoMessage.from_bytes(data))


def reassemble(state: Reassembler, packet: FecPacket) -> ReassemblyEvent:
    """Functional form of :meth:`Reassembler.reassemble`."""
    return state.reassemble(packet)


# Quads


@dataclass(frozen=True)
class Quad:
    """One oriented, colored rectangle."""

    center: Vector3
    normal: Vector3
    half_width: float
    half_height: float
    color: Tuple[int, int, int]


class QuadCloud:
    """Quads of one capture, stored column-wise.

    Args:
        centers (array): ``(N, 3)`` world positions in meters.
        normals (array): ``(N, 3)`` unit normals.
        half_widths (array): ``(N,)`` half extents along the right axis.
        half_heights (array): ``(N,)`` half extents along the up axis.
        colors (array): ``(N, 3)`` RGB bytes.
        source_pose (Pose): World placement of the capturing camera.
    """

    def __init__(
        self,
        centers: npt.ArrayLike,
        normals: npt.ArrayLike,
        half_widths: npt.ArrayLike,
        half_heights: npt.ArrayLike,
        colors: npt.ArrayLike,
        source_pose: Pose,
    ) -> None:
        """Store the columns as arrays."""
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        self.half_widths = np.asarray(half_widths, dtype=np.float64).ravel()
        self.half_heights = np.asarray(half_heights, dtype=np.float64).ravel()
        self.colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        self.source_pose = source_pose
        n = self.centers.shape[0]
        sizes = {
            self.normals.shape[0],
            self.half_widths.size,
            self.half_heights.size,
            self.colors.shape[0],
        }
        if sizes != {n}:
            raise DimensionMismatchError("Quad columns differ in length")
        if n and (self.half_widths.min() <= 0 or self.half_heights.min() <= 0):
            raise ValueError("Quad half extents must be positive")

    @classmethod
    def empty(cls, source_pose: Optional[Pose] = None) -> "QuadCloud":
        """Cloud without quads."""
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 3)),
            np.zeros(0),
            np.zeros(0),
            np.zeros((0, 3), dtype=np.uint8),
            source_pose or Pose(),
        )

    @classmethod
    def from_quads(
        cls, quads: Sequence[Quad], source_pose: Optional[Pose] = None
    ) -> "QuadCloud":
        """Build a cloud from individual quads."""
        if not quads:
            return cls.empty(source_pose)
        return cls(
            [q.center for q in quads],
            [q.normal for q in quads],
            [q.half_width for q in quads],
            [q.half_height for q in quads],
            [q.color for q in quads],
            source_pose or Pose(),
        )

    def __len__(self) -> int:
        """Number of quads."""
        return int(self.centers.shape[0])

    def __getitem__(self, index: int) -> Quad:
        """Quad at ``index``."""
        c = self.centers[index]
        n = self.normals[index]
        rgb = self.colors[index]
        return Quad(
            (float(c[0]), float(c[1]), float(c[2])),
            (float(n[0]), float(n[1]), float(n[2])),
            float(self.half_widths[index]),
            float(self.half_heights[index]),
            (int(rgb[0]), int(rgb[1]), int(rgb[2])),
        )

    def __iter__(self) -> Iterator[Quad]:
        """Iterate over quads."""
        return (self[i] for i in range(len(self)))

    def with_normals(self, normals: FloatArray) -> "QuadCloud":
        """Same quads with new normals."""
        return QuadCloud(
            self.centers,
            normals,
            self.half_widths,
            self.half_heights,
            self.colors,
            self.source_pose,
        )

    def corners(self) -> FloatArray:
        """``(N, 4, 3)`` corners, counter-clockwise seen from the normal."""
        right, up = quad_axes(self.normals)
        rx = right * self.half_widths[:, None]
        uy = up * self.half_heights[:, None]
        c = self.centers
        return np.stack([c - rx - uy, c + rx - uy, c + rx + uy, c - rx + uy], 1)


def _normalize_rows(vectors: FloatArray) -> Tuple[FloatArray, FloatArray]:
    lengths = np.linalg.norm(vectors, axis=1)
    safe = np.where(lengths > 0, lengths, 1.0)
    return vectors / safe[:, None], lengths


def quad_axes(normals: npt.ArrayLike) -> Tuple[FloatArray, FloatArray]:
    """In-plane ``(right, up)`` axes of each quad.

    Up is world +y projected into the quad plane, or world +z when the
    normal is vertical; right is ``up x normal``.
    """
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    up = np.array([0.0, 1.0, 0.0]) - n * n[:, 1:2]
    up, lengths = _normalize_rows(up)
    vertical = lengths < 1e-9
    if vertical.any():
        alt = np.array([0.0, 0.0, 1.0]) - n[vertical] * n[vertical, 2:3]
        up[vertical] = _normalize_rows(alt)[0]
    return np.cross(up, n), up


def sample_color(color: ColorImage, width: int, height: int) -> ColorImage:
    """Nearest-neighbour resample of a color image."""
    if (color.width, color.height) == (width, height):
        return color
    cols = ((np.arange(width) + 0.5) * color.width / width).astype(np.int64)
    rows = ((np.arange(height) + 0.5) * color.height / height).astype(np.int64)
    data = color.data[np.minimum(rows, color.height - 1)][
        :, np.minimum(cols, color.width - 1)
    ]
    return ColorImage(width, height, data)


def build_quads(
    depth: DepthImage,
    color: ColorImage,
    intr: CameraIntrinsics,
    source_pose: Pose,
    enlargement: float = DEFAULT_ENLARGEMENT,
) -> QuadCloud:
    """One quad per valid depth pixel.

    Args:
        depth (DepthImage): Depth registered to the color camera.
        color (ColorImage): Color, resampled to the depth size if needed.
        intr (CameraIntrinsics): Color camera at depth resolution.
        source_pose (Pose): World placement of the capturing camera.
        enlargement (float): Scale applied to the pixel footprint.

    Returns:
        QuadCloud: Quads facing the capturing camera.

    Example:
        >>> intr = CameraIntrinsics(500.0, 500.0, 0.0, 0.0, 1, 1)
        >>> cloud = build_quads(
        ...     DepthImage(1, 1, [1000]), ColorImage.filled(1, 1), intr, Pose()
        ... )
        >>> round(cloud[0].half_width, 6), cloud[0].center[2]
        (0.0012, -1.0)
    """
    if enlargement <= 0:
        raise ValueError(f"Enlargement must be positive, got {enlargement}")
    color = sample_color(color, depth.width, depth.height)
    flat = np.flatnonzero(depth.data.ravel())
    if flat.size == 0:
        return QuadCloud.empty(source_pose)
    v, u = np.divmod(flat, depth.width)
    d = depth.data.ravel()[flat].astype(np.float64) / 1000.0
    centers = source_pose.transform_points(intr.unproject(u, v, d))
    normals, _ = _normalize_rows(source_pose.position() - centers)
    return QuadCloud(
        centers,
        normals,
        enlargement * d / (2.0 * intr.fx),
        enlargement * d / (2.0 * intr.fy),
        color.data.reshape(-1, 3)[flat],
        source_pose,
    )


def orient_quads(
    cloud: QuadCloud,
    viewer_position: npt.ArrayLike,
    mode: str = "billboard",
) -> QuadCloud:
    """Turn every quad toward the viewer.

    Args:
        cloud (QuadCloud): Quads to orient.
        viewer_position (array): Viewer eye position in world meters.
        mode (str): ``billboard`` faces the eye, ``yaw`` only turns about
            the vertical axis, ``none`` keeps the capture orientation.

    Returns:
        QuadCloud: Same centers, sizes and colors with new normals.
    """
    if mode not in ORIENTATIONS:
        raise ConfigError(f"Orientation must be one of {ORIENTATIONS}")
    if mode == "none" or len(cloud) == 0:
        return cloud
    toward = np.asarray(viewer_position, dtype=np.float64) - cloud.centers
    if mode == "yaw":
        toward[:, 1] = 0.0
    normals, lengths = _normalize_rows(toward)
    degenerate = lengths < 1e-12
    normals[degenerate] = cloud.normals[degenerate]
    return cloud.with_normals(normals)


# Rendering


def _concat(clouds: Sequence[QuadCloud]) -> Tuple[FloatArray, ...]:
    live = [c for c in clouds if len(c)]
    if not live:
        return ()
    return (
        np.concatenate([c.corners() for c in live]),
        np.concatenate([c.centers for c in live]),
        np.concatenate([c.colors for c in live]).astype(np.float64),
    )


def rasterize(
    clouds: Sequence[QuadCloud], intr: CameraIntrinsics, camera_pose: Pose
) -> Tuple[ColorImage, DepthImage]:
    """Z-buffered software rendering of quad clouds.

    Each quad is projected through its four corners and filled at pixel
    centers inside the projected polygon, at the depth of its center.
    The nearest fragment wins; ties go to the earlier quad.

    Args:
        clouds (list): Clouds to draw.
        intr (CameraIntrinsics): Virtual camera model.
        camera_pose (Pose): Virtual camera placement in the world.

    Returns:
        tuple: ``(ColorImage, DepthImage)``; empty pixels are black and 0.
    """
    w, h = intr.width, intr.height
    zbuf = np.full(w * h, np.inf)
    cbuf = np.zeros((w * h, 3), dtype=np.uint8)
    arrays = _concat(clouds)
    if arrays:
        corners, centers, colors = arrays
        to_camera = camera_pose.inverse()
        flat = to_camera.transform_points(corners.reshape(-1, 3))
        cam = flat.reshape(-1, 4, 3)
        depth = -to_camera.transform_points(centers)[:, 2]
        uv = intr.project(cam.reshape(-1, 3))[0].reshape(-1, 4, 2)
        x, y = uv[:, :, 0], uv[:, :, 1]
        area = 0.5 * np.sum(
            x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1
        )
        keep = (cam[:, :, 2] < -NEAR_PLANE_METERS).all(axis=1)
        keep &= np.abs(area) >= MIN_PROJECTED_AREA
        with np.errstate(invalid="ignore"):
            x0 = np.maximum(np.ceil(x.min(axis=1)), 0)
            x1 = np.minimum(np.floor(x.max(axis=1)), w - 1)
            y0 = np.maximum(np.ceil(y.min(axis=1)), 0)
            y1 = np.minimum(np.floor(y.max(axis=1)), h - 1)
        keep &= (x1 >= x0) & (y1 >= y0)
        idx = np.flatnonzero(keep)
        if idx.size:
            _fill(
                uv[idx],
                np.sign(area[idx]),
                depth[idx],
                colors[idx].astype(np.uint8),
                x0[idx].astype(np.int64),
                y0[idx].astype(np.int64),
                (x1[idx] - x0[idx] + 1).astype(np.int64),
                (y1[idx] - y0[idx] + 1).astype(np.int64),
                w,
                zbuf,
                cbuf,
            )
    hit = np.isfinite(zbuf)
    mm = np.zeros(w * h, dtype=np.uint16)
    mm[hit] = np.clip(np.rint(zbuf[hit] * 1000.0), 1, 0xFFFF).astype(np.uint16)
    return ColorImage(w, h, cbuf.reshape(h, w, 3)), DepthImage(w, h, mm)


def _fill(
    uv: FloatArray,
    orientation: FloatArray,
    depth: FloatArray,
    colors: npt.NDArray[np.uint8],
    x0: npt.NDArray[np.int64],
    y0: npt.NDArray[np.int64],
    bw: npt.NDArray[np.int64],
    bh: npt.NDArray[np.int64],
    width: int,
    zbuf: FloatArray,
    cbuf: npt.NDArray[np.uint8],
) -> None:
    counts = bw * bh
    ends = np.cumsum(counts)
    start = 0
    while start < counts.size:
        base = int(ends[start] - counts[start])
        stop = int(np.searchsorted(ends, base + FRAGMENT_BATCH, side="right"))
        stop = max(stop, start + 1)
        span = np.arange(start, stop)
        q = np.repeat(span, counts[span])
        local = np.arange(q.size) - np.repeat(
            ends[span] - counts[span] - base, counts[span]
        )
        px = x0[q] + local % bw[q]
        py = y0[q] + local // bw[q]
        inside = np.ones(q.size, dtype=bool)
        for k in range(4):
            a = uv[q, k]
            b = uv[q, (k + 1) % 4]
            cross = (b[:, 0] - a[:, 0]) * (py - a[:, 1]) - (
                b[:, 1] - a[:, 1]
            ) * (px - a[:, 0])
            inside &= orientation[q] * cross >= -EDGE_EPSILON
        q, pix = q[inside], (py * width + px)[inside]
        order = np.lexsort((q, depth[q], pix))
        pix, q = pix[order], q[order]
        first = np.unique(pix, return_index=True)[1]
        pix, q = pix[first], q[first]
        nearer = depth[q] < zbuf[pix]
        zbuf[pix[nearer]] = depth[q[nearer]]
        cbuf[pix[nearer]] = colors[q[nearer]]
        start = stop


def silhouette_mask(
    clouds: Sequence[QuadCloud], intr: CameraIntrinsics, camera_pose: Pose
) -> npt.NDArray[np.bool_]:
    """Pixels that hold at least one projected quad center."""
    mask = np.zeros((intr.height, intr.width), dtype=bool)
    live = [c.centers for c in clouds if len(c)]
    if not live:
        return mask
    cam = camera_pose.inverse().transform_points(np.concatenate(live))
    uv, depth = intr.project(cam)
    with np.errstate(invalid="ignore"):
        u = np.rint(uv[:, 0])
        v = np.rint(uv[:, 1])
        ok = (depth > NEAR_PLANE_METERS) & (u >= 0) & (u < intr.width)
        ok &= (v >= 0) & (v < intr.height)
    mask[v[ok].astype(np.int64), u[ok].astype(np.int64)] = True
    return mask


def coverage_metric(
    rendered: DepthImage, silhouette: npt.ArrayLike
) -> float:
    """Fraction of silhouette pixels that received a fragment.

    An empty silhouette counts as fully covered.

    Raises:
        DimensionMismatchError: If the shapes differ.
    """
    mask = np.asarray(silhouette, dtype=bool)
    if mask.shape != rendered.data.shape:
        raise DimensionMismatchError(
            f"Silhouette {mask.shape} does not match render "
            f"{rendered.data.shape}"
        )
    total = int(mask.sum())
    if total == 0:
        return 1.0
    return int(np.count_nonzero(rendered.data[mask])) / total


def export_ply(cloud: QuadCloud, path: Union[str, Path]) -> None:
    """Write the cloud as ASCII PLY: four colored vertices and a face per quad.

    Raises:
        IoFailureError: If the file cannot be written.
    """
    n = len(cloud)
    header = "\n".join(
        [
            "ply",
            "format ascii 1.0",
            "comment rgbd-relay quad cloud",
            f"element vertex {4 * n}",
            "property double x",
            "property double y",
            "property double z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            f"element face {n}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
    )
    lines = [header]
    if n:
        corners = cloud.corners().reshape(-1, 3)
        rgb = np.repeat(cloud.colors, 4, axis=0)
        lines.extend(
            f"{x!r} {y!r} {z!r} {r} {g} {b}"
            for (x, y, z), (r, g, b) in zip(corners.tolist(), rgb.tolist())
        )
        lines.extend(
            f"4 {4 * i} {4 * i + 1} {4 * i + 2} {4 * i + 3}" for i in range(n)
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoFailureError(f"Cannot write PLY {path}: {exc}") from exc


def write_ppm(image: ColorImage, path: Union[str, Path]) -> None:
    """Write a binary PPM.

    Raises:
        IoFailureError: If the file cannot be written.
    """
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + image.data.tobytes())
    except OSError as exc:
        raise IoFailureError(f"Cannot write PPM {path}: {exc}") from exc


# Viewer


@dataclass(frozen=True)
class ViewerConfig:
    """Rendering and reassembly settings."""

    enlargement: float = DEFAULT_ENLARGEMENT
    orientation: str = "billboard"
    color_hfov_degrees: float = COLOR_HFOV_DEGREES
    floor_window: int = FLOOR_MEDIAN_WINDOW
    horizon: int = REASSEMBLY_HORIZON

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.enlargement <= 0:
            raise ConfigError("enlargement must be positive")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {ORIENTATIONS}")
        if self.floor_window < 1 or self.horizon < 1:
            raise ConfigError("floor_window and horizon must be positive")


@dataclass(frozen=True)
class DecodedFrame:
    """A frame as the viewer holds it."""

    session_id: int
    frame_id: int
    keyframe: bool
    depth: DepthImage
    color: ColorImage
    floor: FloorPlane
    digest: str


class RemoteStream:
    """Reassembly and decoding state of one transmitter session."""

    def __init__(self, session_id: int, config: ViewerConfig) -> None:
        """Start with nothing decoded."""
        self.session_id = session_id
        self.config = config
        self.reassembler = Reassembler(config.horizon)
        self.smoother = FloorSmoother(config.floor_window)
        self.decoder: Optional[DepthDecoder] = None
        self.latest: Optional[DecodedFrame] = None
        self.awaiting_keyframe = False
        self.undecodable = 0

    def receive(self, packet: FecPacket) -> Tuple[Optional[DecodedFrame], bool]:
        """Feed one packet.

        Returns:
            tuple: The decoded frame, if any, and whether a keyframe
            should be requested from the transmitter.
        """
        event = self.reassembler.reassemble(packet)
        if not isinstance(event, FrameReady):
            return None, False
        message = event.message
        cfg = DepthCodecConfig(message.depth_width, message.depth_height)
        if self.decoder is None or self.decoder.cfg != cfg:
            self.decoder = DepthDecoder(cfg)
        if not self.decoder.can_decode(message.frame_id, message.keyframe):
            self.undecodable += 1
            first = not self.awaiting_keyframe
            self.awaiting_keyframe = True
            if first:
                logger.warning(
                    "Session %d: delta frame %d lost its reference, "
                    "requesting a keyframe",
                    self.session_id,
                    message.frame_id,
                )
            return None, first
        depth = self.decoder.decode(
            message.depth, message.frame_id, message.keyframe
        )
        self.awaiting_keyframe = False
        color = decode_color(
            message.color, message.color_width, message.color_height
        )
        frame = DecodedFrame(
            session_id=self.session_id,
            frame_id=message.frame_id,
            keyframe=message.keyframe,
            depth=depth,
            color=color,
            floor=self.smoother.update(message.floor),
            digest=depth.digest(),
        )
        self.latest = frame
        return frame, False

    def intrinsics(self) -> Optional[CameraIntrinsics]:
        """Color camera model at depth resolution for the latest frame."""
        if self.latest is None:
            return None
        c, d = self.latest.color, self.latest.depth
        return intrinsics_for(
            c.width, c.height, self.config.color_hfov_degrees
        ).scaled(d.width, d.height)


class Viewer:
    """Receives every transmitter of a room and renders them together.

    Args:
        config (ViewerConfig): Rendering settings.
        placement (Pose): Where the viewer puts the first transmitter.
        calibration (list, optional): Relative poses of the transmitters,
            first transmitter first.
    """

    def __init__(
        self,
        config: Optional[ViewerConfig] = None,
        placement: Optional[Pose] = None,
        calibration: Optional[Sequence[CalibrationEntry]] = None,
    ) -> None:
        """Start with no streams."""
        self.config = config or ViewerConfig()
        self.placement = placement or Pose()
        self.calibration = list(calibration) if calibration else []
        self.streams: Dict[int, RemoteStream] = {}
        self.audio_packets = 0
        self.malformed_packets = 0
        self._keyframe_requests: List[int] = []

    def receive_datagram(self, datagram: bytes) -> Optional[DecodedFrame]:
        """Parse and feed one datagram; bad ones are counted and skipped."""
        try:
            packet = FecPacket.from_bytes(datagram)
        except RgbdRelayError as err:
            self.malformed_packets += 1
            logger.warning("Discarding datagram: %s", err)
            return None
        return self.receive_packet(packet)

    def receive_packet(self, packet: FecPacket) -> Optional[DecodedFrame]:
        """Feed one packet to its session's stream."""
        if packet.packet_type == PACKET_TYPE_AUDIO:
            self.audio_packets += 1
            return None
        stream = self.streams.get(packet.session_id)
        if stream is None:
            stream = RemoteStream(packet.session_id, self.config)
            self.streams[packet.session_id] = stream
        try:
            frame, request = stream.receive(packet)
        except RgbdRelayError as err:
            self.malformed_packets += 1
            logger.warning(
                "Session %d frame %d: %s",
                packet.session_id,
                packet.frame_id,
                err,
            )
            return None
        if request:
            self._keyframe_requests.append(packet.session_id)
        return frame

    def pop_keyframe_requests(self) -> List[int]:
        """Sessions that need a keyframe, cleared on read."""
        requests, self._keyframe_requests = self._keyframe_requests, []
        return requests

    def _first_session(self) -> Optional[int]:
        if self.calibration:
            return self.calibration[0].transmitter_id
        return min(self.streams) if self.streams else None

    def source_pose(self, session_id: int) -> Optional[Pose]:
        """World pose of a transmitter's color camera.

        The first transmitter is floor-matched at the viewer's placement;
        the others follow from calibration and are not placed without it.
        """
        first_id = self._first_session()
        first = self.streams.get(first_id) if first_id is not None else None
        if first is None or first.latest is None:
            return None
        first_pose = place_capture(first.latest.floor, self.placement)
        if session_id == first_id:
            return first_pose
        if not self.calibration:
            return None
        return compose_calibration(self.calibration, first_pose).get(session_id)

    def quad_clouds(
        self, viewer_position: Optional[npt.ArrayLike] = None
    ) -> List[QuadCloud]:
        """Quad clouds of the latest frame of every placed stream."""
        clouds = []
        for session_id in sorted(self.streams):
            stream = self.streams[session_id]
            pose = self.source_pose(session_id)
            intr = stream.intrinsics()
            if pose is None or intr is None or stream.latest is None:
                continue
            cloud = build_quads(
                stream.latest.depth,
                stream.latest.color,
                intr,
                pose,
                self.config.enlargement,
            )
            if viewer_position is not None:
                cloud = orient_quads(
                    cloud, viewer_position, self.config.orientation
                )
            clouds.append(cloud)
        return clouds

    def render(
        self, intr: CameraIntrinsics, camera_pose: Pose
    ) -> Tuple[ColorImage, DepthImage, float]:
        """Render every stream from a virtual camera.

        Returns:
            tuple: Color image, depth image and coverage of the projected
            points.
        """
        clouds = self.quad_clouds(camera_pose.position())
        color, depth = rasterize(clouds, intr, camera_pose)
        coverage = coverage_metric(
            depth, silhouette_mask(clouds, intr, camera_pose)
        )
        return color, depth, coverage
