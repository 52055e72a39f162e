"""Temporal run-length depth codec.

Each frame is coded as zigzag deltas against the previous reconstruction.
Deltas are grouped into alternating zero and nonzero runs and written as
nibble varints::

    repeat { zero_run, nonzero_len, nonzero_len x zigzag(delta) }

A nibble holds three data bits and a continuation bit (bit 3), least
significant group first. Nibbles are packed two per byte, low nibble
first, and an odd count is padded with a zero nibble.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from rgbd_relay.constants import KEYFRAME_INTERVAL
from rgbd_relay.errors import (
    ConfigError,
    DimensionMismatchError,
    FrameOrderError,
    RunOverflowError,
    TruncatedStreamError,
)
from rgbd_relay.model import DepthImage


logger = logging.getLogger(__name__)

UIntArray = npt.NDArray[np.uint64]
RunArray = npt.NDArray[np.unsignedinteger[Any]]

MAX_VARINT_NIBBLES = 11  # 33 bits covers every value below 2**32
CHASE_STRIDE_LOG2 = 5


def zigzag(v: Any) -> Any:
    """Map a signed integer to a non-negative one.

    Example:
        >>> [zigzag(v) for v in (0, -1, 1, 5)]
        [0, 1, 2, 10]
    """
    return (v << 1) ^ (v >> 31)


def unzigzag(z: Any) -> Any:
    """Inverse of :func:`zigzag`."""
    return (z >> 1) ^ -(z & 1)


def uvarint_encode(value: int) -> List[int]:
    """Encode one value as a list of nibbles.

    Args:
        value (int): A non-negative integer below 2**32.

    Returns:
        list: Nibbles, least significant group first.

    Raises:
        ValueError: If the value is out of range.

    Example:
        >>> uvarint_encode(10)
        [10, 1]
    """
    if not 0 <= value < 1 << 32:
        raise ValueError(f"Varint value {value} out of range")
    nibbles = []
    while True:
        group = value & 0x7
        value >>= 3
        if value:
            nibbles.append(group | 0x8)
        else:
            nibbles.append(group)
            return nibbles


def pack_nibbles(nibbles: Union[List[int], npt.NDArray[np.uint8]]) -> bytes:
    """Pack nibbles two per byte, low nibble first, zero padded."""
    nib = np.asarray(nibbles, dtype=np.uint8)
    if nib.size % 2:
        nib = np.append(nib, np.uint8(0))
    return (nib[0::2] | (nib[1::2] << 4)).astype(np.uint8).tobytes()


def encode_varints(values: npt.ArrayLike) -> bytes:
    """Vectorized nibble-varint encoding of a sequence of values.

    Raises:
        ValueError: If a value is negative or not below 2**32.
    """
    v = np.asarray(values).ravel()
    if v.size == 0:
        return b""
    if int(v.min()) < 0 or int(v.max()) >= 1 << 32:
        raise ValueError("Varint values must be in 0..2**32-1")
    v = v.astype(np.uint32, copy=False)
    wide = np.flatnonzero(v >= 8)
    if wide.size == 0:
        return pack_nibbles(v.astype(np.uint8))

    # levels[k - 1] holds the values that need a nibble at offset k
    extra = np.zeros(v.size, dtype=np.int64)
    levels: List[npt.NDArray[np.intp]] = []
    k = 1
    while wide.size:
        levels.append(wide)
        extra[wide] += 1
        k += 1
        if 3 * k >= 32:
            break
        wide = wide[v[wide] >= np.uint32(1 << (3 * k))]
    first = np.arange(v.size) + np.cumsum(extra) - extra
    nib = np.empty(v.size + int(extra.sum()), dtype=np.uint8)
    nib[first] = (v & 0x7).astype(np.uint8) | (
        (extra > 0).astype(np.uint8) << 3
    )
    for k, wide in enumerate(levels, start=1):
        more = (extra[wide] > k).astype(np.uint8) << 3
        group = (v[wide] >> np.uint32(3 * k)) & 0x7
        nib[first[wide] + k] = group.astype(np.uint8) | more
    return pack_nibbles(nib)


def decode_varints(data: bytes) -> Tuple[UIntArray, npt.NDArray[np.intp]]:
    """Decode every complete varint in a byte string.

    Args:
        data (bytes): Packed nibbles.

    Returns:
        tuple: ``(values, end_nibbles)`` where ``end_nibbles[i]`` is the
            index of the last nibble of value ``i``.

    Raises:
        RunOverflowError: If a value spans more nibbles than 32 bits allow.
    """
    raw = np.frombuffer(data, dtype=np.uint8)
    nib = np.empty(raw.size * 2, dtype=np.uint8)
    nib[0::2] = raw & 0x0F
    nib[1::2] = raw >> 4
    ends = np.flatnonzero(nib < 0x8)
    if ends.size == 0:
        return np.zeros(0, dtype=np.uint64), ends
    if ends.size == int(ends[-1]) + 1:
        return nib[: ends.size].astype(np.uint64), ends
    starts = np.empty_like(ends)
    starts[0] = 0
    starts[1:] = ends[:-1] + 1
    lengths = ends - starts + 1
    if int(lengths.max()) > MAX_VARINT_NIBBLES:
        raise RunOverflowError("Varint exceeds 32 bits")
    values = (nib[starts] & 0x7).astype(np.uint64)
    wide = np.flatnonzero(lengths > 1)
    k = 1
    while wide.size:
        group = (nib[starts[wide] + k] & 0x7).astype(np.uint64)
        values[wide] |= group << np.uint64(3 * k)
        k += 1
        wide = wide[lengths[wide] > k]
    return values, ends


def encode_runs(symbols: npt.ArrayLike) -> RunArray:
    """Turn a symbol sequence into the zero-run/nonzero-run integer stream.

    Every block carries both a zero run and a nonzero length; a trailing
    zero run is closed with a nonzero length of 0. Unsigned input keeps
    its dtype.
    """
    z = np.asarray(symbols).ravel()
    if z.dtype.kind != "u":
        z = z.astype(np.uint64)
    n = z.size
    if n == 0:
        return np.zeros(0, dtype=z.dtype)
    mask = z != 0
    cuts = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    lengths = np.diff(np.concatenate(([0], cuts, [n])))
    if mask[0]:
        lengths = np.concatenate(([0], lengths))
    if lengths.size % 2:
        lengths = np.append(lengths, 0)
    blocks = lengths.size // 2
    nonzero_lens = lengths[1::2]

    # each block is laid out as two header slots, then its values
    layout = np.full(2 * blocks, 2, dtype=np.int64)
    layout[1::2] = nonzero_lens
    is_value = np.repeat(np.tile([False, True], blocks), layout)
    out = np.empty(is_value.size, dtype=z.dtype)
    out[is_value] = z[mask]
    out[~is_value] = lengths
    return out


def _block_heads(ints: UIntArray) -> npt.NDArray[np.int64]:
    """Stream indices of every block header reachable from index 0.

    A header at ``h`` is followed by the next one at ``h + 2 + ints[h + 1]``.
    The chain is followed in strides of ``2**CHASE_STRIDE_LOG2`` blocks on
    a squared jump table and the skipped headers are filled in per row.
    """
    total = ints.size
    link = np.empty(total + 1, dtype=np.int64)
    link[: total - 1] = np.minimum(
        np.arange(2, total + 1) + ints[1:].astype(np.int64), total
    )
    link[total - 1 :] = total
    jump = link
    for _ in range(CHASE_STRIDE_LOG2):
        jump = jump[jump]

    anchors: List[int] = []
    node = 0
    while node < total:
        anchors.append(node)
        node = int(jump[node])
    rows = np.empty((1 << CHASE_STRIDE_LOG2, len(anchors)), dtype=np.int64)
    rows[0] = anchors
    for k in range(1, rows.shape[0]):
        rows[k] = link[rows[k - 1]]
    heads = rows.T.ravel()
    return heads[heads < total]


def decode_runs(data: bytes, count: int) -> Tuple[UIntArray, int]:
    """Read ``count`` symbols from a run-coded byte string.

    Bytes after the last block are ignored.

    Args:
        data (bytes): Bytes starting at the run stream.
        count (int): Number of symbols to recover.

    Returns:
        tuple: ``(symbols, consumed)`` where ``consumed`` is the number of
            whole bytes the stream occupied.

    Raises:
        TruncatedStreamError: If the stream ends early.
        RunOverflowError: If runs exceed ``count``.
    """
    out = np.zeros(count, dtype=np.uint64)
    if count == 0:
        return out, 0
    ints, ends = decode_varints(data)
    total = ints.size
    if total == 0:
        raise TruncatedStreamError(f"Stream ended after 0 of {count} symbols")
    heads = _block_heads(ints)
    has_len = heads + 1 < total
    zero_runs = ints[heads].astype(np.int64)
    nonzero_lens = np.where(
        has_len, ints[np.minimum(heads + 1, total - 1)].astype(np.int64), 0
    )
    reach = np.cumsum(zero_runs + nonzero_lens)
    last = int(np.searchsorted(reach, count))
    blocks = min(last + 1, heads.size)

    bad = np.flatnonzero(
        ~has_len[:blocks]
        | (reach[:blocks] > count)
        | (heads[:blocks] + 2 + nonzero_lens[:blocks] > total)
    )
    if bad.size:
        j = int(bad[0])
        done = int(reach[j - 1]) if j else 0
        if not has_len[j]:
            raise TruncatedStreamError(
                f"Stream ended after {done} of {count} symbols"
            )
        if reach[j] > count:
            raise RunOverflowError(
                f"Runs reach {int(reach[j])} symbols, only {count} expected"
            )
        raise TruncatedStreamError(
            f"Stream ended inside a run of {int(nonzero_lens[j])} values"
        )
    if last >= heads.size:
        raise TruncatedStreamError(
            f"Stream ended after {int(reach[-1])} of {count} symbols"
        )

    zero_runs = zero_runs[:blocks]
    nonzero_lens = nonzero_lens[:blocks]
    pattern = np.tile([False, True], blocks)
    pixel_layout = np.empty(2 * blocks, dtype=np.int64)
    pixel_layout[0::2] = zero_runs
    pixel_layout[1::2] = nonzero_lens
    stream_layout = np.full(2 * blocks, 2, dtype=np.int64)
    stream_layout[1::2] = nonzero_lens
    end = int(heads[blocks - 1] + 2 + nonzero_lens[-1])
    out[np.repeat(pattern, pixel_layout)] = ints[:end][
        np.repeat(pattern, stream_layout)
    ]
    consumed = (int(ends[end - 1]) + 2) // 2
    return out, consumed

@dataclass(frozen=True)
class DepthCodecConfig:
    """Frame size and lossy change threshold for the depth codec."""

    width: int
    height: int
    change_threshold_mm: int = 0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.width < 1 or self.height < 1:
            raise ConfigError(
                f"Depth codec needs a positive size, got "
                f"{self.width}x{self.height}"
            )
        if self.change_threshold_mm < 0:
            raise ConfigError("change_threshold_mm must be non-negative")

    @property
    def pixel_count(self) -> int:
        """Pixels per frame."""
        return self.width * self.height


@dataclass
class DepthEncoderState:
    """Reconstruction the encoder codes the next delta against."""

    previous_reconstructed: DepthImage

    @classmethod
    def initial(cls, cfg: DepthCodecConfig) -> "DepthEncoderState":
        """All-zero starting state."""
        return cls(DepthImage.zeros(cfg.width, cfg.height))


@dataclass
class DepthDecoderState:
    """Reconstruction the decoder adds the next delta to."""

    previous_reconstructed: DepthImage

    @classmethod
    def initial(cls, cfg: DepthCodecConfig) -> "DepthDecoderState":
        """All-zero starting state."""
        return cls(DepthImage.zeros(cfg.width, cfg.height))


def _check_size(image: DepthImage, cfg: DepthCodecConfig) -> None:
    if (image.width, image.height) != (cfg.width, cfg.height):
        raise DimensionMismatchError(
            f"Depth frame is {image.width}x{image.height}, codec expects "
            f"{cfg.width}x{cfg.height}"
        )


def encode_depth(
    state: DepthEncoderState,
    frame: DepthImage,
    cfg: DepthCodecConfig,
    keyframe: bool,
) -> bytes:
    """Encode one depth frame and advance the encoder state.

    Args:
        state (DepthEncoderState): Encoder state, updated in place.
        frame (DepthImage): The frame to code.
        cfg (DepthCodecConfig): Codec configuration.
        keyframe (bool): Code against an all-zero frame.

    Returns:
        bytes: The coded frame.

    Raises:
        DimensionMismatchError: If the frame size differs from ``cfg``.

    Example:
        >>> cfg = DepthCodecConfig(width=4, height=1)
        >>> state = DepthEncoderState.initial(cfg)
        >>> encode_depth(state, DepthImage(4, 1, [0, 0, 5, 0]), cfg, True)
        b'\\x12\\x1a\\x01'
    """
    _check_size(frame, cfg)
    _check_size(state.previous_reconstructed, cfg)
    delta = frame.data.astype(np.int32)
    if not keyframe:
        delta -= state.previous_reconstructed.data
    if cfg.change_threshold_mm > 0:
        delta[np.abs(delta) <= cfg.change_threshold_mm] = 0
        recon = delta if keyframe else delta + state.previous_reconstructed.data
        state.previous_reconstructed = DepthImage(
            cfg.width, cfg.height, recon.astype(np.uint16)
        )
    else:
        state.previous_reconstructed = frame
    symbols = zigzag(delta.ravel()).view(np.uint32)
    payload = encode_varints(encode_runs(symbols))
    logger.debug(
        "Encoded %s depth frame %dx%d into %d bytes",
        "key" if keyframe else "delta",
        cfg.width,
        cfg.height,
        len(payload),
    )
    return payload


def decode_depth(
    state: DepthDecoderState,
    data: bytes,
    cfg: DepthCodecConfig,
    keyframe: bool,
) -> DepthImage:
    """Decode one depth frame and advance the decoder state.

    The state is left untouched when decoding fails.

    Args:
        state (DepthDecoderState): Decoder state, updated on success.
        data (bytes): Bytes produced by :func:`encode_depth`.
        cfg (DepthCodecConfig): Codec configuration.
        keyframe (bool): The frame was coded against an all-zero frame.

    Returns:
        DepthImage: The reconstruction.

    Raises:
        RunOverflowError: If runs or reconstructed values are out of range.
    """
    symbols, _ = decode_runs(data, cfg.pixel_count)
    delta = unzigzag(symbols.astype(np.int64)).reshape(cfg.height, cfg.width)
    if keyframe:
        recon = delta
    else:
        _check_size(state.previous_reconstructed, cfg)
        recon = state.previous_reconstructed.data.astype(np.int64) + delta
    if recon.size and (recon.min() < 0 or recon.max() > 0xFFFF):
        raise RunOverflowError("Reconstructed depth leaves the 16-bit range")
    image = DepthImage(cfg.width, cfg.height, recon.astype(np.uint16))
    state.previous_reconstructed = image
    return image


@dataclass
class DepthEncoder:
    """Stateful encoder applying the keyframe cadence.

    Keyframes are emitted on the first frame, every ``keyframe_interval``
    frames, and on the next frame after :meth:`request_keyframe`.
    """

    cfg: DepthCodecConfig
    keyframe_interval: int = KEYFRAME_INTERVAL
    frames_encoded: int = 0
    keyframe_requested: bool = False
    state: DepthEncoderState = field(init=False)

    def __post_init__(self) -> None:
        """Start from an all-zero reconstruction."""
        self.state = DepthEncoderState.initial(self.cfg)

    def request_keyframe(self) -> None:
        """Force the next frame to be a keyframe."""
        self.keyframe_requested = True

    def encode(self, frame: DepthImage) -> Tuple[bytes, bool]:
        """Encode the next frame, returning its bytes and keyframe flag."""
        keyframe = (
            self.frames_encoded % self.keyframe_interval == 0
            or self.keyframe_requested
        )
        data = encode_depth(self.state, frame, self.cfg, keyframe)
        self.frames_encoded += 1
        self.keyframe_requested = False
        return data, keyframe

    @property
    def reconstruction(self) -> DepthImage:
        """What a decoder holds after the last encoded frame."""
        return self.state.previous_reconstructed

    def state_digest(self) -> str:
        """Hash of the current reconstruction."""
        return self.state.previous_reconstructed.digest()


@dataclass
class DepthDecoder:
    """Stateful decoder that refuses delta frames after a gap.

    A delta frame only decodes when it directly follows the last decoded
    frame; otherwise the caller has to wait for the next keyframe.
    """

    cfg: DepthCodecConfig
    last_frame_id: Optional[int] = None
    state: DepthDecoderState = field(init=False)

    def __post_init__(self) -> None:
        """Start from an all-zero reconstruction."""
        self.state = DepthDecoderState.initial(self.cfg)

    def can_decode(self, frame_id: int, keyframe: bool) -> bool:
        """Whether the frame's reference is the current reconstruction."""
        if keyframe:
            return True
        return self.last_frame_id is not None and frame_id == (
            self.last_frame_id + 1
        )

    def decode(self, data: bytes, frame_id: int, keyframe: bool) -> DepthImage:
        """Decode the next frame.

        Raises:
            FrameOrderError: If a delta frame does not follow the last
                decoded frame.
        """
        if not self.can_decode(frame_id, keyframe):
            raise FrameOrderError(
                f"Delta frame {frame_id} does not follow frame "
                f"{self.last_frame_id}"
            )
        image = decode_depth(self.state, data, self.cfg, keyframe)
        self.last_frame_id = frame_id
        return image

    def state_digest(self) -> str:
        """Hash of the current reconstruction."""
        return self.state.previous_reconstructed.digest()
