"""Tests for the depth_codec module."""

import time
from pathlib import Path
from typing import List

import numpy as np
import pytest

from rgbd_relay.depth_codec import (
    DepthCodecConfig,
    DepthDecoder,
    DepthDecoderState,
    DepthEncoder,
    DepthEncoderState,
    decode_depth,
    decode_runs,
    decode_varints,
    encode_depth,
    encode_runs,
    encode_varints,
    pack_nibbles,
    unzigzag,
    uvarint_encode,
    zigzag,
)
from rgbd_relay.errors import (
    ConfigError,
    DimensionMismatchError,
    FrameOrderError,
    RunOverflowError,
    TruncatedStreamError,
)
from rgbd_relay.model import DepthImage


FIXTURES = Path(__file__).parent / "fixtures"


def random_depth(
    rng: np.random.Generator, width: int, height: int
) -> DepthImage:
    """Depth with holes, smooth regions and large jumps."""
    data = rng.integers(0, 0x10000, (height, width), dtype=np.uint16)
    data[rng.random((height, width)) < 0.3] = 0
    data[: height // 2, : width // 2] = 1500
    return DepthImage(width, height, data)


def test_zigzag_pairs() -> None:
    """Test the signed to unsigned mapping."""
    values = np.array([0, -1, 1, -2, 2, 65535, -65535], dtype=np.int64)
    assert list(zigzag(values)) == [0, 1, 2, 3, 4, 131070, 131069]
    assert list(unzigzag(zigzag(values))) == list(values)


def test_uvarint_encode() -> None:
    """Test nibble groups and continuation bits."""
    assert uvarint_encode(0) == [0]
    assert uvarint_encode(7) == [7]
    assert uvarint_encode(8) == [8, 1]
    assert uvarint_encode(2000) == [8, 10, 15, 3]


def test_uvarint_encode_out_of_range() -> None:
    """Test values must fit 32 bits."""
    with pytest.raises(ValueError):
        uvarint_encode(1 << 32)
    with pytest.raises(ValueError):
        uvarint_encode(-1)


def test_pack_nibbles_pads_odd_count() -> None:
    """Test low nibble first with zero padding."""
    assert pack_nibbles([2, 1, 10]) == b"\x12\x0a"


def test_encode_varints_matches_scalar() -> None:
    """Test the vectorized encoder against the scalar one."""
    values = [0, 5, 8, 63, 64, 2000, 65535, (1 << 32) - 1]
    nibbles = [n for v in values for n in uvarint_encode(v)]
    assert encode_varints(values) == pack_nibbles(nibbles)


def test_decode_varints_values_and_ends() -> None:
    """Test decoding returns each value and its last nibble."""
    values, ends = decode_varints(encode_varints([2, 1, 10, 1, 0]))
    assert list(values) == [2, 1, 10, 1, 0]
    assert list(ends) == [0, 1, 3, 4, 5]


def test_decode_varints_overflow() -> None:
    """Test a value spanning too many nibbles."""
    with pytest.raises(RunOverflowError):
        decode_varints(bytes([0x88] * 6 + [0x00]))


def test_encode_runs_layout() -> None:
    """Test zero runs, nonzero lengths and the closing tail."""
    assert list(encode_runs([0, 0, 10, 0])) == [2, 1, 10, 1, 0]
    assert list(encode_runs([3, 4])) == [0, 2, 3, 4]
    assert list(encode_runs([0, 0, 0])) == [3, 0]


def test_decode_runs_inverse() -> None:
    """Test run decoding recovers the symbols and consumed bytes."""
    symbols = [0, 0, 10, 0, 7, 7, 0]
    data = encode_varints(encode_runs(symbols))
    out, consumed = decode_runs(data + b"\xff", len(symbols))
    assert list(out) == symbols
    assert consumed == len(data)


def test_decode_runs_truncated() -> None:
    """Test a stream cut short."""
    data = encode_varints(encode_runs([0, 5, 6, 7]))
    with pytest.raises(TruncatedStreamError):
        decode_runs(data[:1], 4)


def test_varint_and_run_edges() -> None:
    """Test empty inputs and out-of-range varint values."""
    assert encode_varints([]) == b""
    assert list(encode_runs([])) == []
    out, consumed = decode_runs(b"", 0)
    assert (list(out), consumed) == ([], 0)
    for bad in ([-1], [1 << 32]):
        with pytest.raises(ValueError):
            encode_varints(bad)


@pytest.mark.parametrize(
    "data, count",
    [
        (b"", 4),
        (encode_varints([8]), 10),
        (encode_varints([1, 2, 5, 6]), 5),
    ],
)
def test_decode_runs_stops_short(data: bytes, count: int) -> None:
    """Test streams that end before every symbol is recovered."""
    with pytest.raises(TruncatedStreamError):
        decode_runs(data, count)


def test_decode_runs_overflow() -> None:
    """Test runs reaching past the pixel count."""
    with pytest.raises(RunOverflowError):
        decode_runs(encode_varints([5, 0]), 4)


def test_golden_keyframe() -> None:
    """Test the frozen 1x4 keyframe encoding."""
    cfg = DepthCodecConfig(width=4, height=1)
    state = DepthEncoderState.initial(cfg)
    data = encode_depth(state, DepthImage(4, 1, [0, 0, 5, 0]), cfg, True)
    expected = bytes.fromhex((FIXTURES / "depth_keyframe_1x4.hex").read_text())
    assert data == expected
    decoded = decode_depth(DepthDecoderState.initial(cfg), data, cfg, True)
    assert list(decoded.data.ravel()) == [0, 0, 5, 0]


def test_lossless_random_sequences() -> None:
    """Test bit-exact round trips of random sequences at threshold 0."""
    rng = np.random.default_rng(7)
    cfg = DepthCodecConfig(width=320, height=180)
    for _ in range(20):
        enc = DepthEncoderState.initial(cfg)
        dec = DepthDecoderState.initial(cfg)
        for index in range(10):
            frame = random_depth(rng, cfg.width, cfg.height)
            data = encode_depth(enc, frame, cfg, index == 0)
            assert decode_depth(dec, data, cfg, index == 0) == frame


def random_walk(
    rng: np.random.Generator, length: int, width: int, height: int
) -> List[DepthImage]:
    """Frames whose depth wanders by small steps at a few pixels a frame."""
    base = rng.integers(400, 4000, (height, width), dtype=np.int32)
    base[rng.random((height, width)) < 0.1] = 0
    moves = rng.random((length, height, width)) < 0.05
    steps = rng.integers(-3, 4, (length, height, width), dtype=np.int32)
    steps[0] = 0
    walk = np.clip(base + np.cumsum(steps * moves, axis=0), 0, 0xFFFF)
    return [DepthImage(width, height, frame) for frame in walk]


def test_lossless_random_walks_at_scale() -> None:
    """Test 1000 walks of 10 frames round trip bit-exact within 10 s."""
    rng = np.random.default_rng(11)
    cfg = DepthCodecConfig(width=320, height=180)
    elapsed = 0.0
    for _ in range(1000):
        frames = random_walk(rng, 10, cfg.width, cfg.height)
        enc = DepthEncoderState.initial(cfg)
        dec = DepthDecoderState.initial(cfg)
        decoded: List[DepthImage] = []
        started = time.perf_counter()
        for index, frame in enumerate(frames):
            data = encode_depth(enc, frame, cfg, index == 0)
            decoded.append(decode_depth(dec, data, cfg, index == 0))
        elapsed += time.perf_counter() - started
        assert decoded == frames
    assert elapsed < 10.0


def test_delta_of_unchanged_frame_is_tiny() -> None:
    """Test a repeated frame codes to a single zero run."""
    cfg = DepthCodecConfig(width=64, height=48)
    frame = random_depth(np.random.default_rng(1), 64, 48)
    state = DepthEncoderState.initial(cfg)
    encode_depth(state, frame, cfg, True)
    assert len(encode_depth(state, frame, cfg, False)) <= 4


def test_threshold_keeps_encoder_and_decoder_in_step() -> None:
    """Test lossy coding reconstructs the encoder's reference exactly."""
    rng = np.random.default_rng(3)
    cfg = DepthCodecConfig(width=32, height=16, change_threshold_mm=10)
    enc = DepthEncoderState.initial(cfg)
    dec = DepthDecoderState.initial(cfg)
    base = rng.integers(500, 4000, (16, 32))
    for index in range(8):
        noisy = base + rng.integers(-15, 16, base.shape)
        frame = DepthImage(32, 16, noisy.astype(np.uint16))
        data = encode_depth(enc, frame, cfg, index == 0)
        decoded = decode_depth(dec, data, cfg, index == 0)
        assert decoded == enc.previous_reconstructed
        error = np.abs(decoded.data.astype(int) - frame.data.astype(int))
        assert error.max() <= 10


def test_encode_size_mismatch() -> None:
    """Test frames must match the codec size."""
    cfg = DepthCodecConfig(width=4, height=1)
    with pytest.raises(DimensionMismatchError):
        encode_depth(
            DepthEncoderState.initial(cfg), DepthImage.zeros(2, 2), cfg, True
        )


def test_decode_leaves_state_on_failure() -> None:
    """Test a failed decode keeps the previous reconstruction."""
    cfg = DepthCodecConfig(width=4, height=1)
    state = DepthDecoderState.initial(cfg)
    before = state.previous_reconstructed
    with pytest.raises(TruncatedStreamError):
        decode_depth(state, b"", cfg, True)
    assert state.previous_reconstructed is before


def test_config_validation() -> None:
    """Test codec configuration checks."""
    with pytest.raises(ConfigError):
        DepthCodecConfig(width=0, height=1)
    with pytest.raises(ConfigError):
        DepthCodecConfig(width=1, height=1, change_threshold_mm=-1)


def test_encoder_keyframe_cadence() -> None:
    """Test keyframes on frame 0, every interval and on request."""
    cfg = DepthCodecConfig(width=2, height=2)
    encoder = DepthEncoder(cfg, keyframe_interval=4)
    frame = DepthImage(2, 2, [1, 2, 3, 4])
    flags = [encoder.encode(frame)[1] for _ in range(6)]
    assert flags == [True, False, False, False, True, False]
    encoder.request_keyframe()
    assert encoder.encode(frame)[1] is True
    assert encoder.encode(frame)[1] is False


def test_decoder_refuses_gap() -> None:
    """Test a delta frame after a gap waits for a keyframe."""
    cfg = DepthCodecConfig(width=2, height=2)
    encoder = DepthEncoder(cfg)
    decoder = DepthDecoder(cfg)
    frames = [DepthImage(2, 2, [i, i + 1, 0, 9]) for i in range(1, 4)]
    coded = [encoder.encode(frame) for frame in frames]
    decoder.decode(coded[0][0], 0, coded[0][1])
    assert not decoder.can_decode(2, coded[2][1])
    with pytest.raises(FrameOrderError):
        decoder.decode(coded[2][0], 2, coded[2][1])
    assert decoder.can_decode(1, False)
    decoder.decode(coded[1][0], 1, coded[1][1])
    decoder.decode(coded[2][0], 2, coded[2][1])
    assert decoder.state_digest() == encoder.state_digest()


def test_decoder_needs_keyframe_first() -> None:
    """Test a fresh decoder only accepts keyframes."""
    decoder = DepthDecoder(DepthCodecConfig(width=1, height=1))
    assert not decoder.can_decode(0, False)
    assert decoder.can_decode(5, True)
