"""Pluggable color-plane codecs.

Every color payload starts with a one-byte codec id. Id 0 is the lossless
reference codec below; id 1 is reserved for a standardized video codec and
has no implementation registered.
"""

import logging
from typing import Dict, Protocol

import numpy as np

from rgbd_relay.constants import COLOR_CODEC_REFERENCE
from rgbd_relay.depth_codec import (
    decode_runs,
    encode_runs,
    encode_varints,
    unzigzag,
    zigzag,
)
from rgbd_relay.errors import (
    RunOverflowError,
    TruncatedStreamError,
    UnknownCodecIdError,
)
from rgbd_relay.model import ColorImage


logger = logging.getLogger(__name__)


class ColorCodec(Protocol):
    """Interface a color codec registers under its id byte."""

    codec_id: int

    def encode(self, image: ColorImage) -> bytes:
        """Encode the image body (without the id byte)."""
        ...

    def decode(self, data: bytes, width: int, height: int) -> ColorImage:
        """Decode a body produced by :meth:`encode`."""
        ...


class ReferenceColorCodec:
    """Lossless intra codec built on the depth codec's run grammar.

    Each RGB plane is written as its raw origin byte followed by the
    run-coded zigzag deltas of the remaining pixels. Pixels delta against
    their left neighbour; the first pixel of a row deltas against the
    first pixel of the row above.
    """

    codec_id = COLOR_CODEC_REFERENCE

    def encode(self, image: ColorImage) -> bytes:
        """Encode all three planes."""
        out = bytearray()
        for channel in range(3):
            plane = image.data[:, :, channel].astype(np.int64)
            delta = np.empty_like(plane)
            delta[:, 1:] = plane[:, 1:] - plane[:, :-1]
            delta[1:, 0] = plane[1:, 0] - plane[:-1, 0]
            delta[0, 0] = 0
            out.append(int(plane[0, 0]))
            out += encode_varints(encode_runs(zigzag(delta.ravel()[1:])))
        return bytes(out)

    def decode(self, data: bytes, width: int, height: int) -> ColorImage:
        """Decode all three planes.

        Raises:
            TruncatedStreamError: If a plane is cut short.
            RunOverflowError: If a pixel leaves the 8-bit range.
        """
        count = width * height
        planes = []
        offset = 0
        for channel in range(3):
            if offset >= len(data):
                raise TruncatedStreamError(
                    f"Color stream ends before plane {channel}"
                )
            origin = data[offset]
            symbols, consumed = decode_runs(data[offset + 1 :], count - 1)
            offset += 1 + consumed
            delta = np.empty(count, dtype=np.int64)
            delta[0] = origin
            delta[1:] = unzigzag(symbols.astype(np.int64))
            delta = delta.reshape(height, width)
            delta[:, 0] = np.cumsum(delta[:, 0])
            plane = np.cumsum(delta, axis=1)
            if plane.min() < 0 or plane.max() > 0xFF:
                raise RunOverflowError("Color value leaves the 8-bit range")
            planes.append(plane.astype(np.uint8))
        return ColorImage(width, height, np.stack(planes, axis=-1))


_REGISTRY: Dict[int, ColorCodec] = {
    COLOR_CODEC_REFERENCE: ReferenceColorCodec(),
}


def register_color_codec(codec: ColorCodec) -> None:
    """Make a codec available to :func:`encode_color` and :func:`decode_color`.

    Args:
        codec (ColorCodec): Codec to register under its ``codec_id``.

    Raises:
        ValueError: If the id is outside one byte.
    """
    if not 0 <= codec.codec_id <= 0xFF:
        raise ValueError(f"Codec id {codec.codec_id} does not fit a byte")
    _REGISTRY[codec.codec_id] = codec


def encode_color(
    image: ColorImage, codec_id: int = COLOR_CODEC_REFERENCE
) -> bytes:
    """Encode a color image, prefixed by its codec id byte.

    Args:
        image (ColorImage): The image to encode.
        codec_id (int): Registered codec to use.

    Returns:
        bytes: Id byte followed by the codec body.

    Raises:
        UnknownCodecIdError: If ``codec_id`` is not registered.

    Example:
        >>> encode_color(ColorImage.filled(1, 1, (7, 0, 255)))
        b'\\x00\\x07\\x00\\xff'
    """
    try:
        codec = _REGISTRY[codec_id]
    except KeyError:
        raise UnknownCodecIdError(
            f"Unknown color codec id {codec_id}"
        ) from None
    body = codec.encode(image)
    logger.debug(
        "Encoded %dx%d color frame into %d bytes",
        image.width,
        image.height,
        len(body) + 1,
    )
    return bytes([codec_id]) + body


def decode_color(data: bytes, width: int, height: int) -> ColorImage:
    """Decode bytes produced by :func:`encode_color`.

    Args:
        data (bytes): Id byte followed by the codec body.
        width (int): Image width from the message header.
        height (int): Image height from the message header.

    Returns:
        ColorImage: The decoded image.

    Raises:
        TruncatedStreamError: If the stream is empty or cut short.
        UnknownCodecIdError: If the id byte is not registered.
    """
    if not data:
        raise TruncatedStreamError("Empty color stream")
    try:
        codec = _REGISTRY[data[0]]
    except KeyError:
        raise UnknownCodecIdError(f"Unknown color codec id {data[0]}") from None
    return codec.decode(data[1:], width, height)
