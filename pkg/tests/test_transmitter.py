"""Tests for the transmitter module."""

import dataclasses
import math

import pytest

from rgbd_relay.errors import (
    ConfigError,
    FrameOrderError,
    InvalidIntrinsicsError,
)
from rgbd_relay.fec import FecPacket, decode_packets
from rgbd_relay.message import VideoMessage
from rgbd_relay.model import DepthImage, FloorPlane, intrinsics_for
from rgbd_relay.scene import SceneConfig, SyntheticScene
from rgbd_relay.transmitter import Transmitter, TransmitterConfig, frame_seed


@pytest.fixture(scope="module")
def scene() -> SyntheticScene:
    """Single camera study scene."""
    return SyntheticScene(SceneConfig("study", frame_count=3))


def test_frame_seed_is_stable_and_distinct() -> None:
    """Test per-frame seeds fit 32 bits and vary by frame and session."""
    seeds = {frame_seed(7, s, f) for s in (1, 2) for f in range(100)}
    assert len(seeds) == 200
    assert all(0 <= s < 1 << 32 for s in seeds)
    assert frame_seed(7, 1, 5) == frame_seed(7, 1, 5)


def test_process_builds_decodable_packets(scene: SyntheticScene) -> None:
    """Test the packets of a frame decode back to its message."""
    transmitter = Transmitter(TransmitterConfig(session_id=3, seed=1))
    encoded = transmitter.process(scene.render(0, 0))
    assert encoded.keyframe
    assert encoded.floor_found
    assert len(encoded.packets) == math.ceil(1.5 * encoded.source_count)
    assert {p.session_id for p in encoded.packets} == {3}
    datagrams = encoded.datagrams()
    packets = [FecPacket.from_bytes(d) for d in datagrams]
    data = decode_packets(packets)
    assert data is not None
    assert data == encoded.message.to_bytes()
    assert len(data) == encoded.message_len
    message = VideoMessage.from_bytes(data)
    assert (message.color_width, message.depth_width) == (720, 320)


def test_floor_is_reported_in_color_coordinates(
    scene: SyntheticScene,
) -> None:
    """Test the message floor is close to the scene ground truth."""
    encoded = Transmitter(TransmitterConfig()).process(scene.render(0, 1))
    truth = scene.cameras[0].floor()
    assert encoded.message.floor.distance == pytest.approx(
        truth.distance, abs=0.02
    )


def test_keyframe_request_and_cadence(scene: SyntheticScene) -> None:
    """Test delta frames, requested keyframes and the interval."""
    transmitter = Transmitter(TransmitterConfig(keyframe_interval=2))
    flags = [transmitter.process(f).keyframe for f in scene.frames(0)]
    assert flags == [True, False, True]
    transmitter = Transmitter(TransmitterConfig())
    frames = list(scene.frames(0))
    transmitter.process(frames[0])
    transmitter.request_keyframe()
    assert transmitter.process(frames[1]).keyframe


def test_frame_order_is_enforced(scene: SyntheticScene) -> None:
    """Test a repeated frame id is rejected."""
    transmitter = Transmitter(TransmitterConfig())
    frame = scene.render(0, 0)
    transmitter.process(frame)
    with pytest.raises(FrameOrderError):
        transmitter.process(frame)


def test_floor_falls_back_when_missing(scene: SyntheticScene) -> None:
    """Test a frame without a floor keeps the previous estimate."""
    frame = scene.render(0, 0)
    transmitter = Transmitter(TransmitterConfig())
    first = transmitter.process(frame)
    empty = dataclasses.replace(
        frame, frame_id=1, depth=DepthImage.zeros(320, 180)
    )
    second = transmitter.process(empty)
    assert not second.floor_found
    assert second.message.floor == first.message.floor


def test_initial_floor_is_default() -> None:
    """Test the transmitter starts from the default floor."""
    assert Transmitter(TransmitterConfig()).floor == FloorPlane()


def test_background_removal(scene: SyntheticScene) -> None:
    """Test a depth window drops floor pixels from the message."""
    frame = scene.render(0, 0)
    full = Transmitter(TransmitterConfig()).process(frame)
    cut = Transmitter(TransmitterConfig(near_mm=1500, far_mm=3000))
    assert len(cut.process(frame).message.depth) < len(full.message.depth)


def test_transmitter_config_validation() -> None:
    """Test transmitter settings checks."""
    with pytest.raises(ConfigError):
        TransmitterConfig(redundancy=-1.0)
    with pytest.raises(ConfigError):
        TransmitterConfig(mtu_payload=0)
    with pytest.raises(ConfigError):
        TransmitterConfig(keyframe_interval=0)
    with pytest.raises(ConfigError):
        TransmitterConfig(near_mm=100)
    with pytest.raises(ConfigError):
        TransmitterConfig(color_hfov_degrees=180.0)


def test_color_camera_must_match_viewer_model(scene: SyntheticScene) -> None:
    """Test a color camera with another field of view is refused."""
    frame = scene.render(0, 0)
    color = frame.color_intrinsics
    narrow = dataclasses.replace(
        frame,
        color_intrinsics=intrinsics_for(color.width, color.height, 70.0),
    )
    with pytest.raises(InvalidIntrinsicsError):
        Transmitter(TransmitterConfig()).process(narrow)
    matched = Transmitter(TransmitterConfig(color_hfov_degrees=70.0))
    assert matched.process(narrow).keyframe
