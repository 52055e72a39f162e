"""Per-frame video message: header, floor plane, color and depth bytes."""

import math
import struct
from dataclasses import dataclass

from rgbd_relay.constants import MESSAGE_HEADER_FORMAT
from rgbd_relay.errors import MalformedMessageError
from rgbd_relay.model import FloorPlane


MESSAGE_HEADER_SIZE = struct.calcsize(MESSAGE_HEADER_FORMAT)
FLOOR_NORM_TOLERANCE = 1e-4


@dataclass(frozen=True)
class VideoMessage:
    """Everything the viewer needs to rebuild one frame.

    The layout is little-endian: frame id (u32), keyframe flag (u8),
    color width and height (u16 each), depth width and height (u16 each),
    floor ``nx, ny, nz, d`` (f32 each), color and depth lengths (u32 each),
    then the color bytes and the depth bytes.
    """

    frame_id: int
    keyframe: bool
    color_width: int
    color_height: int
    depth_width: int
    depth_height: int
    floor: FloorPlane
    color: bytes
    depth: bytes

    def to_bytes(self) -> bytes:
        """Serialize the message."""
        header = struct.pack(
            MESSAGE_HEADER_FORMAT,
            self.frame_id,
            1 if self.keyframe else 0,
            self.color_width,
            self.color_height,
            self.depth_width,
            self.depth_height,
            *self.floor.normal,
            self.floor.distance,
            len(self.color),
            len(self.depth),
        )
        return header + self.color + self.depth

    @classmethod
    def from_bytes(cls, data: bytes) -> "VideoMessage":
        """Parse a message, renormalizing the 32-bit floor normal.

        Raises:
            MalformedMessageError: If the lengths disagree with the buffer,
                a dimension is zero or the floor normal is not unit length.
        """
        if len(data) < MESSAGE_HEADER_SIZE:
            raise MalformedMessageError(
                f"Message of {len(data)} bytes is shorter than its header"
            )
        (
            frame_id,
            keyframe,
            color_width,
            color_height,
            depth_width,
            depth_height,
            nx,
            ny,
            nz,
            distance,
            color_len,
            depth_len,
        ) = struct.unpack_from(MESSAGE_HEADER_FORMAT, data)
        if MESSAGE_HEADER_SIZE + color_len + depth_len != len(data):
            raise MalformedMessageError(
                f"Header announces {color_len} color and {depth_len} depth "
                f"bytes, message carries {len(data) - MESSAGE_HEADER_SIZE}"
            )
        if min(color_width, color_height, depth_width, depth_height) == 0:
            raise MalformedMessageError("Message carries a zero dimension")
        if keyframe > 1:
            raise MalformedMessageError(f"Keyframe flag {keyframe} is not 0/1")
        norm = math.sqrt(nx * nx + ny * ny + nz * nz)
        if abs(norm - 1.0) > FLOOR_NORM_TOLERANCE:
            raise MalformedMessageError(f"Floor normal norm {norm} is not 1")
        if ny <= 0:
            raise MalformedMessageError("Floor normal does not face up")
        floor = FloorPlane.from_coefficients((nx, ny, nz), distance)
        color_end = MESSAGE_HEADER_SIZE + color_len
        return cls(
            frame_id=frame_id,
            keyframe=bool(keyframe),
            color_width=color_width,
            color_height=color_height,
            depth_width=depth_width,
            depth_height=depth_height,
            floor=floor,
            color=bytes(data[MESSAGE_HEADER_SIZE:color_end]),
            depth=bytes(data[color_end:]),
        )
