"""Transmit and receive over a real datagram transport.

Each side runs two stages: a worker thread and the calling thread joined
by a bounded queue. The transmitter encodes on the worker and sends
paced at the frame rate; the receiver reads sockets on the worker and
decodes and renders on the caller.
"""

import logging
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from rgbd_relay.config import SessionConfig
from rgbd_relay.constants import FRAME_INTERVAL_MICROS
from rgbd_relay.errors import IoFailureError, RgbdRelayError, SessionError
from rgbd_relay.geometry import CalibrationEntry
from rgbd_relay.model import RgbdFrame
from rgbd_relay.session import render_camera
from rgbd_relay.transmitter import (
    EncodedFrame,
    Transmitter,
    TransmitterConfig,
)
from rgbd_relay.transport import DatagramChannel
from rgbd_relay.viewer import Viewer, ViewerConfig, write_ppm


logger = logging.getLogger(__name__)

QUEUE_DEPTH = 8
POLL_INTERVAL_SECONDS = 0.001


@dataclass
class LiveStats:
    """Counters of one live run."""

    frames: int = 0
    datagrams: int = 0
    bytes: int = 0
    renders: int = 0
    malformed: int = 0


_DONE = object()


def transmit_live(
    config: SessionConfig,
    channel: DatagramChannel,
    frames: Iterable[RgbdFrame],
    session_id: int = 1,
    paced: bool = True,
) -> LiveStats:
    """Encode frames on a worker thread and send them.

    Args:
        config (SessionConfig): Coding settings.
        channel (DatagramChannel): Where datagrams go.
        frames (iterable): Captured frames in order.
        session_id (int): Session id stamped on every packet.
        paced (bool): Hold the send loop to the frame interval.

    Returns:
        LiveStats: What was sent.

    Raises:
        SessionError: If encoding a frame fails.
    """
    transmitter = Transmitter(
        TransmitterConfig(
            session_id=session_id,
            redundancy=config.redundancy,
            seed=config.seed,
            mtu_payload=config.mtu_payload,
            keyframe_interval=config.keyframe_interval,
            change_threshold_mm=config.change_threshold_mm,
        )
    )
    encoded: "queue.Queue[object]" = queue.Queue(QUEUE_DEPTH)
    stop = threading.Event()

    def offer(item: object) -> bool:
        while not stop.is_set():
            try:
                encoded.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def encode() -> None:
        try:
            for frame in frames:
                try:
                    item: object = transmitter.process(frame)
                except RgbdRelayError as err:
                    offer(SessionError(frame.frame_id, err))
                    return
                if not offer(item):
                    return
        finally:
            offer(_DONE)

    worker = threading.Thread(target=encode, name="encoder", daemon=True)
    worker.start()
    stats = LiveStats()
    start = time.monotonic()
    try:
        while True:
            item = encoded.get()
            if item is _DONE:
                break
            if isinstance(item, SessionError):
                raise item
            assert isinstance(item, EncodedFrame)
            if paced:
                due = start + stats.frames * FRAME_INTERVAL_MICROS / 1e6
                time.sleep(max(0.0, due - time.monotonic()))
            now = int((time.monotonic() - start) * 1e6)
            for datagram in item.datagrams():
                channel.send(datagram, now)
                stats.datagrams += 1
                stats.bytes += len(datagram)
            stats.frames += 1
    finally:
        stop.set()
        worker.join()
    logger.info(
        "Sent %d frames in %d datagrams (%d bytes)",
        stats.frames,
        stats.datagrams,
        stats.bytes,
    )
    return stats


def receive_live(
    config: SessionConfig,
    channel: DatagramChannel,
    idle_timeout: float = 2.0,
    max_frames: Optional[int] = None,
    calibration: Optional[Iterable[CalibrationEntry]] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> LiveStats:
    """Read datagrams on a worker thread and decode them.

    Stops after ``idle_timeout`` seconds without traffic or once
    ``max_frames`` frames were decoded. Every ``render_every``-th decoded
    frame is rendered and, with an output directory, written as PPM.

    Returns:
        LiveStats: What was received.
    """
    viewer = Viewer(
        ViewerConfig(
            enlargement=config.enlargement, orientation=config.orientation
        ),
        calibration=list(calibration) if calibration else None,
    )
    intr, pose = render_camera(config.preset)
    target = Path(output_dir) if output_dir is not None else None
    if target is not None:
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailureError(f"Cannot create {target}: {exc}") from exc
    received: "queue.Queue[bytes]" = queue.Queue()
    stop = threading.Event()
    worker_errors: Dict[str, Exception] = {}

    def read() -> None:
        try:
            while not stop.is_set():
                datagrams = channel.poll(0)
                for datagram in datagrams:
                    received.put(datagram)
                if not datagrams:
                    time.sleep(POLL_INTERVAL_SECONDS)
        except RgbdRelayError as err:
            worker_errors["read"] = err

    worker = threading.Thread(target=read, name="reader", daemon=True)
    worker.start()
    stats = LiveStats()
    try:
        while max_frames is None or stats.frames < max_frames:
            try:
                datagram = received.get(timeout=idle_timeout)
            except queue.Empty:
                logger.info("No traffic for %.1f s, stopping", idle_timeout)
                break
            stats.datagrams += 1
            stats.bytes += len(datagram)
            frame = viewer.receive_datagram(datagram)
            if frame is None:
                continue
            stats.frames += 1
            if not config.render_every or stats.frames % config.render_every:
                continue
            color, _, coverage = viewer.render(intr, pose)
            stats.renders += 1
            logger.debug(
                "Rendered frame %d, coverage %.3f", frame.frame_id, coverage
            )
            if target is not None:
                write_ppm(color, target / f"render_{frame.frame_id:05d}.ppm")
    finally:
        stop.set()
        worker.join()
    if "read" in worker_errors:
        raise worker_errors["read"]
    stats.malformed = viewer.malformed_packets
    return stats
