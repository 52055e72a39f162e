"""Tests for the fec module."""

from pathlib import Path

import numpy as np
import pytest

from rgbd_relay.bench import bench_fec
from rgbd_relay.constants import PACKET_HEADER_SIZE, PACKET_TYPE_AUDIO
from rgbd_relay.errors import (
    EmptyMessageError,
    InconsistentHeaderError,
    MalformedPacketError,
    PayloadLengthError,
)
from rgbd_relay.fec import (
    DecoderWorkspace,
    FecPacket,
    audio_packets,
    coefficient_row,
    decode_packets,
    encode_message,
    fountain_decode,
    fountain_encode,
    gf256_inv,
    gf256_mul,
    packet_count,
    packetize,
    repair_packet,
)


FIXTURES = Path(__file__).parent / "fixtures"


def test_gf256_field_facts() -> None:
    """Test known products and inverses."""
    assert gf256_mul(0x57, 0x83) == 0xC1
    assert gf256_mul(0, 0x99) == 0
    for a in range(1, 256):
        assert gf256_mul(a, gf256_inv(a)) == 1
    with pytest.raises(ZeroDivisionError):
        gf256_inv(0)


def test_packet_header_fixture() -> None:
    """Test parsing the frozen datagram."""
    data = bytes.fromhex((FIXTURES / "fec_packet.hex").read_text())
    packet = FecPacket.from_bytes(data)
    assert packet.session_id == 1
    assert packet.frame_id == 2
    assert packet.packet_index == 0
    assert packet.source_count == 1
    assert packet.message_len == 3
    assert packet.prng_seed == 0x01020304
    assert packet.payload == b"abc"
    assert packet.to_bytes() == data


def test_header_is_36_bytes() -> None:
    """Test the serialized header size."""
    packet = FecPacket(1, 1, 0, 1, 0, 0, b"")
    assert len(packet.to_bytes()) == PACKET_HEADER_SIZE


@pytest.mark.parametrize(
    "data",
    [
        b"TG\x01",
        b"XX" + bytes(34),
        b"TG\x02" + bytes(33),
    ],
)
def test_malformed_datagrams(data: bytes) -> None:
    """Test short, foreign and wrong-version datagrams."""
    with pytest.raises(MalformedPacketError):
        FecPacket.from_bytes(data)


@pytest.mark.parametrize(
    "offset, value",
    [(3, 2), (3, 0xFF), (26, 1), (35, 0x80)],
)
def test_unknown_type_and_reserved_bytes(offset: int, value: int) -> None:
    """Test unknown packet types and nonzero reserved bytes are refused."""
    data = bytearray(FecPacket(1, 1, 0, 1, 3, 0, b"abc").to_bytes())
    data[offset] = value
    with pytest.raises(MalformedPacketError):
        FecPacket.from_bytes(bytes(data))


def test_payload_length_mismatch() -> None:
    """Test a datagram cut after the header."""
    data = FecPacket(1, 1, 0, 1, 3, 0, b"abc").to_bytes()
    with pytest.raises(PayloadLengthError):
        FecPacket.from_bytes(data[:-1])


def test_packet_counts() -> None:
    """Test ceil(1.5 k) packets per message."""
    assert [packet_count(k, 0.5) for k in (1, 4, 48, 100)] == [2, 6, 72, 150]
    assert packet_count(10, 0.0) == 10
    with pytest.raises(ValueError):
        packet_count(1, -0.1)


def test_packetize_pads_last_block() -> None:
    """Test blocks are equal sized and zero padded."""
    blocks = packetize(b"abcde", 2)
    assert blocks.shape == (3, 2)
    assert blocks.tobytes() == b"abcde\x00"
    with pytest.raises(EmptyMessageError):
        packetize(b"")
    with pytest.raises(ValueError):
        packetize(b"a", 0)


def test_systematic_packets_carry_blocks() -> None:
    """Test the first k packets are the source blocks."""
    message = bytes(range(200)) * 3
    packets = encode_message(message, 0.5, 77, 4, 9, mtu_payload=100)
    assert len(packets) == 9
    for index, packet in enumerate(packets[:6]):
        assert packet.payload == message[index * 100 : (index + 1) * 100]
        assert packet.session_id == 4
        assert packet.frame_id == 9
        assert packet.message_len == 600


def test_coefficient_rows_are_deterministic() -> None:
    """Test repair rows depend only on seed, index and k."""
    a = coefficient_row(123, 12, 10)
    assert (a == coefficient_row(123, 12, 10)).all()
    assert not (a == coefficient_row(124, 12, 10)).all()
    assert a.any()
    unit = coefficient_row(123, 3, 10)
    assert list(np.flatnonzero(unit)) == [3]


def test_systematic_decode_needs_no_row_operations() -> None:
    """Test receiving exactly the source packets."""
    rng = np.random.default_rng(0)
    message = rng.integers(0, 256, 1000, dtype=np.uint8).tobytes()
    packets = encode_message(message, 0.5, 5, mtu_payload=64)
    k = packets[0].source_count
    workspace = DecoderWorkspace.for_packet(packets[0])
    result = None
    for packet in packets[:k]:
        result = fountain_decode(workspace, packet)
    assert result == message
    assert workspace.row_operations == 0


def test_decode_from_repair_packets_only() -> None:
    """Test any k independent packets recover the message."""
    rng = np.random.default_rng(1)
    message = rng.integers(0, 256, 500, dtype=np.uint8).tobytes()
    blocks = packetize(message, 50)
    repair = [
        repair_packet(blocks, index, 99, message_len=len(message))
        for index in range(10, 25)
    ]
    assert decode_packets(repair) == message


def test_decode_shuffled_subset() -> None:
    """Test a shuffled mix of source and repair packets."""
    rng = np.random.default_rng(2)
    message = rng.integers(0, 256, 3000, dtype=np.uint8).tobytes()
    packets = encode_message(message, 1.0, 11, mtu_payload=100)
    order = rng.permutation(len(packets))[:40]
    assert decode_packets([packets[i] for i in order]) == message


def test_too_few_packets() -> None:
    """Test fewer than k packets never decode."""
    packets = encode_message(bytes(1000), 0.5, 3, mtu_payload=100)
    assert decode_packets(packets[11:20]) is None
    assert decode_packets([]) is None


def test_duplicate_packets_do_not_add_rank() -> None:
    """Test a repeated packet leaves the rank unchanged."""
    packets = encode_message(b"x" * 300, 0.5, 3, mtu_payload=100)
    workspace = DecoderWorkspace.for_packet(packets[0])
    workspace.add(packets[3])
    workspace.add(packets[3])
    assert workspace.rank == 1
    assert workspace.packets_seen == 2
    assert not workspace.done


def test_workspace_rejects_other_frames() -> None:
    """Test header and payload checks."""
    packets = encode_message(b"x" * 300, 0.5, 3, frame_id=1, mtu_payload=100)
    other = encode_message(b"x" * 300, 0.5, 3, frame_id=2, mtu_payload=100)
    workspace = DecoderWorkspace.for_packet(packets[0])
    with pytest.raises(InconsistentHeaderError):
        workspace.add(other[0])
    short = FecPacket(0, 1, 0, 3, 300, 3, b"x" * 99)
    with pytest.raises(PayloadLengthError):
        workspace.add(short)


def test_fountain_encode_limits() -> None:
    """Test messages that overflow the 16-bit index."""
    blocks = np.zeros((50000, 1), dtype=np.uint8)
    with pytest.raises(ValueError):
        fountain_encode(blocks, 0.5, 0)


def test_audio_packets() -> None:
    """Test PCM goes out as audio packets without repair."""
    packets = audio_packets(b"\x01\x02" * 700, 2, 5, mtu_payload=1000)
    assert len(packets) == 2
    assert {p.packet_type for p in packets} == {PACKET_TYPE_AUDIO}
    assert decode_packets(packets) == b"\x01\x02" * 700


def test_recovery_rate_at_twenty_percent_loss() -> None:
    """Test 150 packets for 100 blocks survive 20% loss."""
    result = bench_fec(k=100, loss_probability=0.2, trials=1000, seed=1)
    assert result["n"] == 150
    assert result["success_rate"] >= 0.99


def test_recovery_rate_at_forty_percent_loss() -> None:
    """Test 40% loss rarely leaves k of 150 packets."""
    result = bench_fec(k=100, loss_probability=0.4, trials=1000, seed=2)
    # P(Bin(150, 0.6) >= 100) = 0.0555; 0.025 is over three standard
    # deviations at 1000 trials
    assert abs(result["success_rate"] - 0.0555) <= 0.025
    assert result["oracle_success_rate"] == pytest.approx(0.0555, abs=0.025)


def test_two_extra_packets_almost_always_suffice() -> None:
    """Test rank k is reached from k + 2 random packets."""
    result = bench_fec(k=20, trials=10_000, seed=3, received=22)
    assert result["n"] == 30
    assert result["success_rate"] >= 0.999
    assert result["oracle_success_rate"] is None
