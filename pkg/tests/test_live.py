"""Tests for the live module."""

import threading
from pathlib import Path
from typing import Dict, List

import pytest

from rgbd_relay.config import SessionConfig
from rgbd_relay.errors import FrameOrderError, SessionError
from rgbd_relay.live import LiveStats, receive_live, transmit_live
from rgbd_relay.scene import SceneConfig, SyntheticScene
from rgbd_relay.transport import UdpChannel


class MemoryChannel:
    """In-process channel that delivers everything on the next poll."""

    def __init__(self) -> None:
        """Start empty."""
        self.datagrams: List[bytes] = []

    def send(self, datagram: bytes, now_micros: int = 0) -> None:
        """Queue one datagram."""
        self.datagrams.append(datagram)

    def poll(self, now_micros: int = 0) -> List[bytes]:
        """Hand over everything queued so far."""
        out, self.datagrams = self.datagrams, []
        return out


@pytest.fixture(scope="module")
def scene() -> SyntheticScene:
    """Three frames of the study scene."""
    return SyntheticScene(SceneConfig(frame_count=3))


def test_transmit_then_receive(tmp_path: Path, scene: SyntheticScene) -> None:
    """Test frames sent to memory decode and render on the other side."""
    config = SessionConfig(render_every=1)
    channel = MemoryChannel()
    sent = transmit_live(config, channel, scene.frames(0), paced=False)
    assert sent.frames == 3
    assert sent.datagrams == len(channel.datagrams)
    assert sent.bytes == sum(len(d) for d in channel.datagrams)

    got = receive_live(config, channel, idle_timeout=0.5, output_dir=tmp_path)
    assert got.frames == 3
    assert got.renders == 3
    assert got.malformed == 0
    assert sorted(p.name for p in tmp_path.glob("*.ppm")) == [
        "render_00000.ppm",
        "render_00001.ppm",
        "render_00002.ppm",
    ]


def test_receive_counts_malformed_datagrams(
    caplog: pytest.LogCaptureFixture,
) -> None:
    """Test junk datagrams are counted and do not stop the receiver."""
    channel = MemoryChannel()
    channel.send(b"\x00" * 10)
    stats = receive_live(SessionConfig(), channel, idle_timeout=0.2)
    assert stats == LiveStats(datagrams=1, bytes=10, malformed=1)
    assert "Discarding datagram" in caplog.text


def test_transmit_failure_names_the_frame(scene: SyntheticScene) -> None:
    """Test a repeated frame stops the sender with its frame id."""
    frame = scene.render(0, 0)
    with pytest.raises(SessionError) as info:
        transmit_live(
            SessionConfig(), MemoryChannel(), [frame, frame], paced=False
        )
    assert info.value.frame_id == 0
    assert isinstance(info.value.cause, FrameOrderError)


def test_udp_loopback(scene: SyntheticScene) -> None:
    """Test a paced run over loopback UDP."""
    config = SessionConfig(render_every=2)
    results: Dict[str, LiveStats] = {}
    with UdpChannel() as inbound:
        with UdpChannel(peer=inbound.address) as outbound:

            def listen() -> None:
                results["received"] = receive_live(
                    config, inbound, idle_timeout=10.0, max_frames=3
                )

            listener = threading.Thread(target=listen)
            listener.start()
            sent = transmit_live(config, outbound, scene.frames(0))
            listener.join(timeout=30.0)
    assert sent.frames == 3
    assert results["received"].frames == 3
    assert results["received"].renders == 1
