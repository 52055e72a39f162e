"""Sender side: preprocess, encode and fountain-code each captured frame."""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional

from rgbd_relay.color_codec import encode_color
from rgbd_relay.constants import (
    COLOR_CODEC_REFERENCE,
    COLOR_HFOV_DEGREES,
    DEFAULT_MTU_PAYLOAD,
    DEFAULT_REDUNDANCY,
    KEYFRAME_INTERVAL,
    UINT64_MASK,
)
from rgbd_relay.depth_codec import DepthCodecConfig, DepthEncoder
from rgbd_relay.errors import (
    ConfigError,
    InvalidIntrinsicsError,
    NoFloorFoundError,
)
from rgbd_relay.fec import FecPacket, encode_message, splitmix64
from rgbd_relay.geometry import (
    RansacParams,
    extract_floor,
    register_depth_to_color,
    remove_background,
)
from rgbd_relay.message import VideoMessage
from rgbd_relay.model import (
    FloorPlane,
    RgbdFrame,
    intrinsics_for,
    validate_frame,
)


logger = logging.getLogger(__name__)


def frame_seed(seed: int, session_id: int, frame_id: int) -> int:
    """32-bit coefficient seed for one frame of one session."""
    mixed = ((seed << 32) ^ (session_id << 20) ^ frame_id) & UINT64_MASK
    return splitmix64(mixed)[1] & 0xFFFFFFFF


def check_color_intrinsics(frame: RgbdFrame, hfov_degrees: float) -> None:
    """Refuse color cameras the viewer cannot rebuild.

    Messages carry image sizes but no intrinsics, so the viewer assumes
    square pixels, a centered principal point and ``hfov_degrees``.

    Raises:
        InvalidIntrinsicsError: If the color intrinsics differ from that.
    """
    color = frame.color_intrinsics
    expected = intrinsics_for(color.width, color.height, hfov_degrees)
    got = (color.fx, color.fy, color.cx, color.cy)
    want = (expected.fx, expected.fy, expected.cx, expected.cy)
    if any(abs(a - b) > 1e-6 * max(1.0, abs(b)) for a, b in zip(got, want)):
        raise InvalidIntrinsicsError(
            f"Color intrinsics {got} differ from the {hfov_degrees} degree "
            f"pinhole {want} the viewer assumes"
        )


@dataclass(frozen=True)
class TransmitterConfig:
    """Settings of one transmitter stream."""

    session_id: int = 1
    redundancy: float = DEFAULT_REDUNDANCY
    seed: int = 0
    mtu_payload: int = DEFAULT_MTU_PAYLOAD
    keyframe_interval: int = KEYFRAME_INTERVAL
    change_threshold_mm: int = 0
    near_mm: Optional[int] = None
    far_mm: Optional[int] = None
    color_codec_id: int = COLOR_CODEC_REFERENCE
    color_hfov_degrees: float = COLOR_HFOV_DEGREES
    ransac: RansacParams = field(default_factory=RansacParams)

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.redundancy < 0:
            raise ConfigError("redundancy must be non-negative")
        if self.mtu_payload < 1:
            raise ConfigError("mtu_payload must be positive")
        if self.keyframe_interval < 1:
            raise ConfigError("keyframe_interval must be positive")
        if (self.near_mm is None) != (self.far_mm is None):
            raise ConfigError("near_mm and far_mm must be given together")
        if not 0 < self.color_hfov_degrees < 180:
            raise ConfigError("color_hfov_degrees must be in (0, 180)")


@dataclass(frozen=True)
class EncodedFrame:
    """Output of the transmitter for one frame."""

    frame_id: int
    keyframe: bool
    message: VideoMessage
    message_len: int
    packets: List[FecPacket]
    reconstruction_digest: str
    floor_found: bool

    @property
    def source_count(self) -> int:
        """Source blocks the message was split into."""
        return self.packets[0].source_count

    def datagrams(self) -> List[bytes]:
        """Serialized packets ready for a channel."""
        return [packet.to_bytes() for packet in self.packets]


class Transmitter:
    """Turns captured frames into fountain-coded datagrams.

    Per frame: validate, register depth into the color camera, extract
    the floor, optionally cut the background, encode color and depth,
    build the video message, then packetize and fountain-code it.
    """

    def __init__(self, config: TransmitterConfig) -> None:
        """Create a transmitter; the depth encoder is sized on first use."""
        self.config = config
        self.encoder: Optional[DepthEncoder] = None
        self.floor = FloorPlane()
        self.last_frame_id: Optional[int] = None

    def request_keyframe(self) -> None:
        """Force the next depth frame to be a keyframe."""
        if self.encoder is not None:
            self.encoder.request_keyframe()

    def process(self, frame: RgbdFrame) -> EncodedFrame:
        """Encode one frame.

        Args:
            frame (RgbdFrame): The captured frame.

        Returns:
            EncodedFrame: Message and packets for the frame.

        Raises:
            DimensionMismatchError: If the frame is inconsistent.
            InvalidIntrinsicsError: If the viewer could not rebuild the
                color camera.
            FrameOrderError: If frame ids do not increase.
        """
        cfg = self.config
        validate_frame(frame, self.last_frame_id)
        check_color_intrinsics(frame, cfg.color_hfov_degrees)
        depth = frame.depth
        if self.encoder is None:
            self.encoder = DepthEncoder(
                DepthCodecConfig(
                    depth.width, depth.height, cfg.change_threshold_mm
                ),
                keyframe_interval=cfg.keyframe_interval,
            )

        registered = register_depth_to_color(frame)
        geometry = frame.color_intrinsics.scaled(depth.width, depth.height)
        params = dataclasses.replace(
            cfg.ransac, seed=cfg.ransac.seed + frame.frame_id
        )
        try:
            self.floor = extract_floor(registered, geometry, params)
            floor_found = True
        except NoFloorFoundError as err:
            logger.warning(
                "Frame %d: %s; reusing the previous floor", frame.frame_id, err
            )
            floor_found = False
        if cfg.near_mm is not None and cfg.far_mm is not None:
            registered = remove_background(registered, cfg.near_mm, cfg.far_mm)

        color_bytes = encode_color(frame.color, cfg.color_codec_id)
        depth_bytes, keyframe = self.encoder.encode(registered)
        message = VideoMessage(
            frame_id=frame.frame_id,
            keyframe=keyframe,
            color_width=frame.color.width,
            color_height=frame.color.height,
            depth_width=depth.width,
            depth_height=depth.height,
            floor=self.floor,
            color=color_bytes,
            depth=depth_bytes,
        )
        payload = message.to_bytes()
        packets = encode_message(
            payload,
            cfg.redundancy,
            frame_seed(cfg.seed, cfg.session_id, frame.frame_id),
            session_id=cfg.session_id,
            frame_id=frame.frame_id,
            mtu_payload=cfg.mtu_payload,
        )
        self.last_frame_id = frame.frame_id
        logger.debug(
            "Frame %d: %d color + %d depth bytes, %s, %d packets",
            frame.frame_id,
            len(color_bytes),
            len(depth_bytes),
            "keyframe" if keyframe else "delta",
            len(packets),
        )
        return EncodedFrame(
            frame_id=frame.frame_id,
            keyframe=keyframe,
            message=message,
            message_len=len(payload),
            packets=packets,
            reconstruction_digest=self.encoder.state_digest(),
            floor_found=floor_found,
        )
