"""End-to-end simulated session and its deterministic report.

The driver runs scene, transmitter, lossy channel and viewer on one
simulated 30 fps clock. The report is line-delimited JSON: one record per
transmitted frame followed by one summary record. It carries no wall-clock
values, so identical settings produce identical bytes.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from rgbd_relay.config import SessionConfig
from rgbd_relay.constants import FRAME_INTERVAL_MICROS, RESOLUTION_PRESETS
from rgbd_relay.errors import IoFailureError, RgbdRelayError, SessionError
from rgbd_relay.fec import audio_packets
from rgbd_relay.geometry import CalibrationEntry, look_at
from rgbd_relay.model import (
    CameraIntrinsics,
    Pose,
    RgbdFrame,
    intrinsics_for,
)
from rgbd_relay.scene import FIGURE_CENTER, SceneConfig, SyntheticScene
from rgbd_relay.transmitter import Transmitter, TransmitterConfig
from rgbd_relay.transport import LossyChannel
from rgbd_relay.viewer import Viewer, ViewerConfig, write_ppm


logger = logging.getLogger(__name__)

RENDER_EYE = (1.8, 1.5, 0.0)
RENDER_HFOV_DEGREES = 60.0
AUDIO_BYTES_PER_FRAME = 3200
ORACLE_TRIALS = 2000


@dataclass
class FrameRecord:
    """What happened to one transmitted frame."""

    session: int
    frame: int
    keyframe: bool
    color_bytes: int
    depth_bytes: int
    message_bytes: int
    source_blocks: int
    packets: int
    hash: str
    completed: bool = False
    decoded: bool = False
    match: Optional[bool] = None
    coverage: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        """Record as a report line."""
        return {"type": "frame", **dataclasses.asdict(self)}


@dataclass
class SessionReport:
    """Per-frame records plus totals."""

    frames: List[FrameRecord] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        """Every decoded frame matched the encoder reconstruction."""
        return int(self.summary.get("hash_mismatches", 0)) == 0

    def lines(self) -> Iterator[str]:
        """Report lines without trailing newlines."""
        for record in self.frames:
            yield json.dumps(record.to_dict(), sort_keys=True)
        yield json.dumps({"type": "summary", **self.summary}, sort_keys=True)

    def to_jsonl(self) -> str:
        """Whole report as text."""
        return "\n".join(self.lines()) + "\n"

    def write(self, path: Path) -> None:
        """Write the report.

        Raises:
            IoFailureError: If the file cannot be written.
        """
        try:
            path.write_text(self.to_jsonl(), encoding="utf-8")
        except OSError as exc:
            raise IoFailureError(f"Cannot write report {path}: {exc}") from exc


def completion_oracle(
    frames: Sequence[Tuple[int, int]],
    loss_probability: float,
    trials: int = ORACLE_TRIALS,
    seed: int = 0,
) -> float:
    """Expected frame completion under independent packet loss.

    Each frame succeeds when at least ``k`` of its ``n`` packets arrive.

    Args:
        frames (list): ``(k, n)`` per frame.
        loss_probability (float): Per-packet loss.
        trials (int): Monte Carlo repetitions.
        seed (int): Generator seed.

    Returns:
        float: Mean completion ratio over the trials.

    Example:
        >>> completion_oracle([(10, 15)], 0.0)
        1.0
    """
    if not frames:
        return 0.0
    k = np.array([f[0] for f in frames])
    n = np.array([f[1] for f in frames])
    rng = np.random.default_rng(seed)
    received = rng.binomial(n, 1.0 - loss_probability, size=(trials, k.size))
    return float((received >= k).mean())


def render_camera(preset: str) -> Tuple[CameraIntrinsics, Pose]:
    """Intrinsics and pose of the fixed side camera used for renders."""
    _, (dw, dh) = RESOLUTION_PRESETS[preset]
    return intrinsics_for(dw, dh, RENDER_HFOV_DEGREES), look_at(
        RENDER_EYE, FIGURE_CENTER
    )


def run_session(
    config: SessionConfig,
    sources: Optional[Dict[int, Iterable[RgbdFrame]]] = None,
    calibration: Optional[List[CalibrationEntry]] = None,
) -> SessionReport:
    """Drive capture, coding, the lossy channel and the viewer.

    Args:
        config (SessionConfig): Session settings.
        sources (dict, optional): Frames per session id; defaults to the
            synthetic scene.
        calibration (list, optional): Relative transmitter poses; defaults
            to the synthetic scene's.

    Returns:
        SessionReport: Deterministic report of the run.

    Raises:
        SessionError: If a stage fails, with the frame id attached.
    """
    if sources is None:
        scene = SyntheticScene(
            SceneConfig(
                config.preset, config.cameras, config.frame_count, config.seed
            )
        )
        sources = {
            cam.session_id: scene.frames(i)
            for i, cam in enumerate(scene.cameras)
        }
        if calibration is None and config.cameras > 1:
            calibration = scene.calibration()
    iterators = {sid: iter(frames) for sid, frames in sorted(sources.items())}
    transmitters = {
        sid: Transmitter(
            TransmitterConfig(
                session_id=sid,
                redundancy=config.redundancy,
                seed=config.seed,
                mtu_payload=config.mtu_payload,
                keyframe_interval=config.keyframe_interval,
                change_threshold_mm=config.change_threshold_mm,
            )
        )
        for sid in iterators
    }
    channels = {
        sid: LossyChannel(
            dataclasses.replace(
                config.channel, seed=config.channel.seed + sid - 1
            )
        )
        for sid in iterators
    }
    viewer = Viewer(
        ViewerConfig(
            enlargement=config.enlargement, orientation=config.orientation
        ),
        calibration=calibration,
    )
    render_intr, render_pose = render_camera(config.preset)
    output_dir = config.output_dir
    if output_dir is not None:
        try:
            output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailureError(f"Cannot create {output_dir}: {exc}") from exc

    records: Dict[Tuple[int, int], FrameRecord] = {}
    newest = {sid: -1 for sid in iterators}
    keyframe_requests = 0
    bytes_sent = 0

    def deliver(sid: int, datagrams: List[bytes]) -> None:
        for datagram in datagrams:
            decoded = viewer.receive_datagram(datagram)
            stream = viewer.streams.get(sid)
            done = stream.reassembler.newest_completed if stream else None
            if done is not None and done != newest[sid]:
                newest[sid] = done
                if (sid, done) in records:
                    records[(sid, done)].completed = True
            if decoded is not None:
                record = records[(decoded.session_id, decoded.frame_id)]
                record.decoded = True
                record.match = decoded.digest == record.hash

    for index in range(config.frame_count):
        now = index * FRAME_INTERVAL_MICROS
        for sid in viewer.pop_keyframe_requests():
            keyframe_requests += 1
            transmitters[sid].request_keyframe()
        for sid, frames in iterators.items():
            frame = next(frames, None)
            if frame is None:
                continue
            try:
                encoded = transmitters[sid].process(frame)
            except RgbdRelayError as err:
                raise SessionError(frame.frame_id, err) from err
            records[(sid, frame.frame_id)] = FrameRecord(
                session=sid,
                frame=frame.frame_id,
                keyframe=encoded.keyframe,
                color_bytes=len(encoded.message.color),
                depth_bytes=len(encoded.message.depth),
                message_bytes=encoded.message_len,
                source_blocks=encoded.source_count,
                packets=len(encoded.packets),
                hash=encoded.reconstruction_digest,
            )
            datagrams = encoded.datagrams()
            if config.audio:
                pcm = bytes(AUDIO_BYTES_PER_FRAME)
                datagrams += [
                    p.to_bytes() for p in audio_packets(pcm, sid, index)
                ]
            for datagram in datagrams:
                channels[sid].send(datagram, now)
                bytes_sent += len(datagram)
        for sid, channel in channels.items():
            deliver(sid, channel.poll(now))

        if config.render_every and index % config.render_every == 0:
            color, _, coverage = viewer.render(render_intr, render_pose)
            first = min(iterators)
            if (first, index) in records:
                records[(first, index)].coverage = round(coverage, 6)
            if output_dir is not None:
                write_ppm(color, output_dir / f"render_{index:05d}.ppm")

    for sid, channel in channels.items():
        deliver(sid, channel.drain())

    report = SessionReport(frames=list(records.values()))
    report.summary = _summarize(report.frames, channels, viewer, config)
    report.summary["keyframe_requests"] = keyframe_requests
    report.summary["bytes_sent"] = bytes_sent
    if output_dir is not None:
        report.write(output_dir / "report.jsonl")
    logger.info(
        "Session finished: %d/%d frames completed, %d mismatches",
        report.summary["frames_completed"],
        report.summary["frames_sent"],
        report.summary["hash_mismatches"],
    )
    return report


def _summarize(
    frames: List[FrameRecord],
    channels: Dict[int, LossyChannel],
    viewer: Viewer,
    config: SessionConfig,
) -> Dict[str, Any]:
    sent = len(frames)
    completed = sum(r.completed for r in frames)
    decoded = sum(r.decoded for r in frames)
    coverages = [r.coverage for r in frames if r.coverage is not None]
    stats = [c.stats for c in channels.values()]
    oracle = completion_oracle(
        [(r.source_blocks, r.packets) for r in frames],
        config.channel.loss_probability,
        seed=config.seed,
    )
    return {
        "frames_sent": sent,
        "frames_completed": completed,
        "frames_decoded": decoded,
        "frames_incomplete": sent - completed,
        "hash_mismatches": sum(r.match is False for r in frames),
        "completion_ratio": round(completed / sent, 6) if sent else 0.0,
        "oracle_completion": round(oracle, 6),
        "packets_sent": sum(s.sent for s in stats),
        "packets_delivered": sum(s.delivered for s in stats),
        "packets_lost": sum(s.lost for s in stats),
        "packets_in_flight": sum(s.in_flight for s in stats),
        "audio_packets_received": viewer.audio_packets,
        "malformed_packets": viewer.malformed_packets,
        "mean_coverage": (
            round(sum(coverages) / len(coverages), 6) if coverages else None
        ),
    }
