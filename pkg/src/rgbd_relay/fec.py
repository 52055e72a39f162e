"""Packetization and a systematic random-linear fountain code over GF(256).

Packet ``i < k`` carries source block ``i`` unchanged. Packet ``i >= k``
carries ``sum_j c_j * block_j`` where the coefficients come from splitmix64
seeded by ``prng_seed ^ (i * 0x9E3779B97F4A7C15)``, so a receiver rebuilds
every row from the header alone.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from rgbd_relay.constants import (
    DEFAULT_MTU_PAYLOAD,
    GF256_POLYNOMIAL,
    PACKET_HEADER_FORMAT,
    PACKET_HEADER_SIZE,
    PACKET_MAGIC,
    PACKET_RESERVED_OFFSET,
    PACKET_TYPE_AUDIO,
    PACKET_TYPE_VIDEO,
    PACKET_TYPES,
    PACKET_VERSION,
    SPLITMIX_GAMMA,
    SPLITMIX_MUL1,
    SPLITMIX_MUL2,
    UINT64_MASK,
)
from rgbd_relay.errors import (
    EmptyMessageError,
    InconsistentHeaderError,
    MalformedPacketError,
    PayloadLengthError,
)


logger = logging.getLogger(__name__)

ByteArray = npt.NDArray[np.uint8]

MAX_PACKETS = 1 << 16


def _xtime(a: int) -> int:
    a <<= 1
    if a & 0x100:
        a ^= GF256_POLYNOMIAL
    return a


def _build_tables() -> Tuple[ByteArray, ByteArray, ByteArray]:
    exp = [0] * 510
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _xtime(x) ^ x  # x * 0x03
    for i in range(255, 510):
        exp[i] = exp[i - 255]
    exp_arr = np.array(exp, dtype=np.int64)
    log_arr = np.array(log, dtype=np.int64)
    mul = exp_arr[log_arr[:, None] + log_arr[None, :]]
    mul[0, :] = 0
    mul[:, 0] = 0
    inv = np.zeros(256, dtype=np.int64)
    inv[1:] = exp_arr[(255 - log_arr[1:]) % 255]
    return (
        mul.astype(np.uint8),
        inv.astype(np.uint8),
        exp_arr[:255].astype(np.uint8),
    )


MUL_TABLE, INV_TABLE, EXP_TABLE = _build_tables()


def gf256_mul(a: int, b: int) -> int:
    """Multiply two field elements (reduction polynomial 0x11B).

    Example:
        >>> hex(gf256_mul(0x80, 0x02))
        '0x1b'
    """
    return int(MUL_TABLE[a, b])


def gf256_inv(a: int) -> int:
    """Multiplicative inverse of a nonzero field element.

    Raises:
        ZeroDivisionError: If ``a`` is 0.
    """
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV_TABLE[a])


def splitmix64(state: int) -> Tuple[int, int]:
    """Advance a splitmix64 state, returning ``(new_state, output)``."""
    state = (state + SPLITMIX_GAMMA) & UINT64_MASK
    z = state
    z = ((z ^ (z >> 30)) * SPLITMIX_MUL1) & UINT64_MASK
    z = ((z ^ (z >> 27)) * SPLITMIX_MUL2) & UINT64_MASK
    return state, z ^ (z >> 31)


def coefficient_row(prng_seed: int, packet_index: int, k: int) -> ByteArray:
    """Coding coefficients of one packet.

    Systematic packets get a unit row. Repair rows take successive
    splitmix64 outputs as little-endian bytes; an all-zero row is redrawn
    from the next starting state.

    Args:
        prng_seed (int): Seed from the packet header.
        packet_index (int): Index of the packet within its message.
        k (int): Number of source blocks.

    Returns:
        array: ``k`` coefficient bytes.
    """
    if packet_index < k:
        row = np.zeros(k, dtype=np.uint8)
        row[packet_index] = 1
        return row
    start = (prng_seed ^ (packet_index * SPLITMIX_GAMMA)) & UINT64_MASK
    while True:
        state = start
        out = bytearray()
        while len(out) < k:
            state, z = splitmix64(state)
            out += z.to_bytes(8, "little")
        row = np.frombuffer(bytes(out[:k]), dtype=np.uint8).copy()
        if row.any():
            return row
        start = (start + 1) & UINT64_MASK


def gf256_combine(coefficients: ByteArray, blocks: ByteArray) -> ByteArray:
    """``sum_j coefficients[j] * blocks[j]`` over GF(256)."""
    coefficients = np.asarray(coefficients, dtype=np.uint8)
    used = np.flatnonzero(coefficients)
    if used.size == 0:
        return np.zeros(blocks.shape[1], dtype=np.uint8)
    products = MUL_TABLE[coefficients[used, None], blocks[used]]
    return np.bitwise_xor.reduce(products, axis=0)


@dataclass(frozen=True)
class FecPacket:
    """One coded datagram."""

    session_id: int
    frame_id: int
    packet_index: int
    source_count: int
    message_len: int
    prng_seed: int
    payload: bytes
    packet_type: int = PACKET_TYPE_VIDEO

    @property
    def payload_len(self) -> int:
        """Length of the payload in bytes."""
        return len(self.payload)

    def to_bytes(self) -> bytes:
        """Serialize the 36-byte header followed by the payload."""
        header = struct.pack(
            PACKET_HEADER_FORMAT,
            PACKET_MAGIC,
            PACKET_VERSION,
            self.packet_type,
            self.session_id,
            self.frame_id,
            self.packet_index,
            self.source_count,
            self.message_len,
            self.prng_seed,
            self.payload_len,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "FecPacket":
        """Parse a datagram.

        Raises:
            MalformedPacketError: If the header is short or unrecognized.
            PayloadLengthError: If the payload length disagrees with the
                header.
        """
        if len(data) < PACKET_HEADER_SIZE:
            raise MalformedPacketError(
                f"Datagram of {len(data)} bytes is shorter than the header"
            )
        (
            magic,
            version,
            packet_type,
            session_id,
            frame_id,
            packet_index,
            source_count,
            message_len,
            prng_seed,
            payload_len,
        ) = struct.unpack_from(PACKET_HEADER_FORMAT, data)
        if magic != PACKET_MAGIC or version != PACKET_VERSION:
            raise MalformedPacketError(
                f"Unknown packet magic {magic!r} version {version}"
            )
        if packet_type not in PACKET_TYPES:
            raise MalformedPacketError(f"Unknown packet type {packet_type}")
        if any(data[PACKET_RESERVED_OFFSET:PACKET_HEADER_SIZE]):
            raise MalformedPacketError("Reserved header bytes are not zero")
        payload = bytes(data[PACKET_HEADER_SIZE:])
        if len(payload) != payload_len:
            raise PayloadLengthError(
                f"Header announces {payload_len} payload bytes, "
                f"datagram carries {len(payload)}"
            )
        return cls(
            session_id=session_id,
            frame_id=frame_id,
            packet_index=packet_index,
            source_count=source_count,
            message_len=message_len,
            prng_seed=prng_seed,
            payload=payload,
            packet_type=packet_type,
        )


def packetize(
    message: bytes, mtu_payload: int = DEFAULT_MTU_PAYLOAD
) -> ByteArray:
    """Split a message into equal zero-padded source blocks.

    Args:
        message (bytes): The message to split.
        mtu_payload (int): Block size in bytes.

    Returns:
        array: ``(k, mtu_payload)`` blocks with ``k = ceil(len / mtu)``.

    Raises:
        EmptyMessageError: If the message is empty.
        ValueError: If ``mtu_payload`` is below 1.
    """
    if mtu_payload < 1:
        raise ValueError(f"mtu_payload must be positive, got {mtu_payload}")
    if not message:
        raise EmptyMessageError("Cannot packetize an empty message")
    k = -(-len(message) // mtu_payload)
    buffer = np.zeros(k * mtu_payload, dtype=np.uint8)
    buffer[: len(message)] = np.frombuffer(message, dtype=np.uint8)
    return buffer.reshape(k, mtu_payload)


def packet_count(k: int, redundancy: float) -> int:
    """Packets sent for ``k`` source blocks: ``ceil((1 + redundancy) * k)``.

    Example:
        >>> [packet_count(k, 0.5) for k in (1, 4, 48, 100)]
        [2, 6, 72, 150]
    """
    if redundancy < 0:
        raise ValueError(f"Redundancy must be non-negative, got {redundancy}")
    return math.ceil(round((1.0 + redundancy) * k, 9))


def repair_packet(
    blocks: ByteArray,
    packet_index: int,
    prng_seed: int,
    session_id: int = 0,
    frame_id: int = 0,
    message_len: Optional[int] = None,
    packet_type: int = PACKET_TYPE_VIDEO,
) -> FecPacket:
    """Build the packet at any index; indices past ``n`` stay decodable."""
    k, block_size = blocks.shape
    if not 0 <= packet_index < MAX_PACKETS:
        raise ValueError(f"Packet index {packet_index} does not fit 16 bits")
    if packet_index < k:
        payload = blocks[packet_index]
    else:
        row = coefficient_row(prng_seed, packet_index, k)
        payload = gf256_combine(row, blocks)
    return FecPacket(
        session_id=session_id,
        frame_id=frame_id,
        packet_index=packet_index,
        source_count=k,
        message_len=k * block_size if message_len is None else message_len,
        prng_seed=prng_seed,
        payload=payload.tobytes(),
        packet_type=packet_type,
    )


def fountain_encode(
    blocks: ByteArray,
    redundancy: float,
    seed: int,
    session_id: int = 0,
    frame_id: int = 0,
    message_len: Optional[int] = None,
    packet_type: int = PACKET_TYPE_VIDEO,
) -> List[FecPacket]:
    """Emit the systematic packets plus ``redundancy * k`` repair packets.

    Args:
        blocks (array): ``(k, block_size)`` source blocks.
        redundancy (float): Extra fraction of packets, 0.5 sends 1.5k.
        seed (int): 32-bit coefficient seed written to every header.
        session_id (int): Header session id.
        frame_id (int): Header frame id.
        message_len (int, optional): True message length before padding.
        packet_type (int): Header packet type.

    Returns:
        list: ``ceil((1 + redundancy) * k)`` packets in index order.
    """
    blocks = np.asarray(blocks, dtype=np.uint8)
    k = blocks.shape[0]
    n = packet_count(k, redundancy)
    if n > MAX_PACKETS:
        raise ValueError(f"{n} packets do not fit a 16-bit packet index")
    seed &= 0xFFFFFFFF
    packets = [
        repair_packet(
            blocks, i, seed, session_id, frame_id, message_len, packet_type
        )
        for i in range(n)
    ]
    logger.debug(
        "Frame %d: %d source blocks, %d packets", frame_id, k, len(packets)
    )
    return packets


def encode_message(
    message: bytes,
    redundancy: float,
    seed: int,
    session_id: int = 0,
    frame_id: int = 0,
    mtu_payload: int = DEFAULT_MTU_PAYLOAD,
    packet_type: int = PACKET_TYPE_VIDEO,
) -> List[FecPacket]:
    """Packetize and fountain-encode one message."""
    return fountain_encode(
        packetize(message, mtu_payload),
        redundancy,
        seed,
        session_id=session_id,
        frame_id=frame_id,
        message_len=len(message),
        packet_type=packet_type,
    )


def audio_packets(
    pcm: bytes,
    session_id: int,
    sequence: int,
    mtu_payload: int = DEFAULT_MTU_PAYLOAD,
) -> List[FecPacket]:
    """Wrap raw PCM in audio-type packets without redundancy."""
    return encode_message(
        pcm,
        0.0,
        0,
        session_id=session_id,
        frame_id=sequence,
        mtu_payload=mtu_payload,
        packet_type=PACKET_TYPE_AUDIO,
    )


@dataclass
class DecoderWorkspace:
    """Incremental Gaussian elimination for one frame.

    Rows are kept in reduced row echelon form and stored by pivot column,
    so once the rank reaches ``k`` the payload table holds the source
    blocks in order.
    """

    session_id: int
    frame_id: int
    source_count: int
    prng_seed: int
    payload_len: int
    message_len: int
    packet_type: int = PACKET_TYPE_VIDEO
    rank: int = 0
    row_operations: int = 0
    packets_seen: int = 0
    message: Optional[bytes] = None
    _rows: ByteArray = field(init=False, repr=False)
    _payloads: ByteArray = field(init=False, repr=False)
    _pivots: Dict[int, bool] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Allocate the coefficient and payload tables."""
        k = self.source_count
        self._rows = np.zeros((k, k), dtype=np.uint8)
        self._payloads = np.zeros((k, self.payload_len), dtype=np.uint8)
        self._pivots = {}

    @classmethod
    def for_packet(cls, packet: FecPacket) -> "DecoderWorkspace":
        """Workspace sized from a packet header."""
        return cls(
            session_id=packet.session_id,
            frame_id=packet.frame_id,
            source_count=packet.source_count,
            prng_seed=packet.prng_seed,
            payload_len=packet.payload_len,
            message_len=packet.message_len,
            packet_type=packet.packet_type,
        )

    @property
    def done(self) -> bool:
        """Whether the message has been recovered."""
        return self.message is not None

    def _check(self, packet: FecPacket) -> None:
        expected = (
            self.session_id,
            self.frame_id,
            self.source_count,
            self.prng_seed,
            self.message_len,
            self.packet_type,
        )
        got = (
            packet.session_id,
            packet.frame_id,
            packet.source_count,
            packet.prng_seed,
            packet.message_len,
            packet.packet_type,
        )
        if got != expected:
            raise InconsistentHeaderError(
                f"Packet header {got} does not match workspace {expected}"
            )
        if packet.payload_len != self.payload_len:
            raise PayloadLengthError(
                f"Payload of {packet.payload_len} bytes, workspace expects "
                f"{self.payload_len}"
            )

    def add(self, packet: FecPacket) -> Optional[bytes]:
        """Absorb one packet.

        Returns:
            bytes: The recovered message once rank reaches ``k``, else None.

        Raises:
            InconsistentHeaderError: If the header belongs to another frame.
            PayloadLengthError: If the payload size differs.
        """
        self._check(packet)
        self.packets_seen += 1
        if self.message is not None:
            return self.message
        k = self.source_count
        row = coefficient_row(self.prng_seed, packet.packet_index, k)
        payload = np.frombuffer(packet.payload, dtype=np.uint8).copy()

        pivots = np.array(sorted(self._pivots), dtype=np.int64)
        if pivots.size:
            hits = pivots[row[pivots] != 0]
            if hits.size:
                coefs = row[hits]
                row ^= gf256_combine(coefs, self._rows[hits])
                payload ^= gf256_combine(coefs, self._payloads[hits])
                self.row_operations += int(hits.size)
        nonzero = np.flatnonzero(row)
        if nonzero.size == 0:
            return None

        col = int(nonzero[0])
        scale = int(row[col])
        if scale != 1:
            inv = INV_TABLE[scale]
            row = MUL_TABLE[inv][row]
            payload = MUL_TABLE[inv][payload]
        if pivots.size:
            owners = pivots[self._rows[pivots, col] != 0]
            for owner in owners:
                coef = self._rows[owner, col]
                self._rows[owner] ^= MUL_TABLE[coef][row]
                self._payloads[owner] ^= MUL_TABLE[coef][payload]
            self.row_operations += int(owners.size)
        self._rows[col] = row
        self._payloads[col] = payload
        self._pivots[col] = True
        self.rank += 1

        if self.rank == k:
            self.message = self._payloads.tobytes()[: self.message_len]
            logger.debug(
                "Frame %d recovered from %d packets with %d row operations",
                self.frame_id,
                self.packets_seen,
                self.row_operations,
            )
        return self.message


def fountain_decode(
    workspace: DecoderWorkspace, packet: FecPacket
) -> Optional[bytes]:
    """Feed a packet to a workspace; ``None`` means more packets are needed."""
    return workspace.add(packet)


def decode_packets(packets: Sequence[FecPacket]) -> Optional[bytes]:
    """Decode a batch of packets from one message."""
    if not packets:
        return None
    workspace = DecoderWorkspace.for_packet(packets[0])
    message = None
    for packet in packets:
        message = workspace.add(packet)
    return message
