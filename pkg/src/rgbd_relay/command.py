"""Command-line interface."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, NoReturn, Optional, Tuple

import click

from rgbd_relay import __version__
from rgbd_relay.bench import bench_codec, bench_fec
from rgbd_relay.config import SessionConfig, default_map
from rgbd_relay.constants import (
    DEFAULT_ENLARGEMENT,
    DEFAULT_MTU_PAYLOAD,
    DEFAULT_REDUNDANCY,
    RESOLUTION_PRESETS,
)
from rgbd_relay.errors import RgbdRelayError
from rgbd_relay.geometry import CalibrationEntry, look_at, read_calibration
from rgbd_relay.live import receive_live, transmit_live
from rgbd_relay.model import RgbdFrame, intrinsics_for
from rgbd_relay.scene import (
    FIGURE_CENTER,
    FileFrameSource,
    SceneConfig,
    SyntheticScene,
    camera_directory,
    write_scene,
)
from rgbd_relay.session import run_session
from rgbd_relay.signaling import (
    RoomService,
    SignalingClient,
    SignalingServer,
)
from rgbd_relay.transmitter import Transmitter, TransmitterConfig
from rgbd_relay.transport import ChannelConfig, UdpChannel
from rgbd_relay.viewer import (
    ORIENTATIONS,
    Viewer,
    ViewerConfig,
    export_ply,
    write_ppm,
)


logger = logging.getLogger(__name__)

SEED = click.IntRange(min=0)

LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


def _address(value: str) -> Tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected HOST:PORT, got {value!r}")
    return host, int(port)


def _fail(err: Exception) -> NoReturn:
    click.echo(err, err=True)
    raise SystemExit(1) from None


def _echo_json(data: Dict[str, Any]) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


def _session_options(func: Any) -> Any:
    """Options shared by every command that runs a session."""
    options = [
        click.option(
            "--preset",
            type=click.Choice(sorted(RESOLUTION_PRESETS)),
            default="study",
            show_default=True,
            help="Capture resolution preset.",
        ),
        click.option(
            "--seed",
            type=SEED,
            required=True,
            help="Seed of every random stage.",
        ),
        click.option(
            "--redundancy",
            type=float,
            default=DEFAULT_REDUNDANCY,
            show_default=True,
            help="Repair packets as a fraction of source blocks.",
        ),
        click.option(
            "--mtu",
            type=int,
            default=DEFAULT_MTU_PAYLOAD,
            show_default=True,
            help="Payload bytes per packet.",
        ),
        click.option(
            "--threshold-mm",
            type=int,
            default=0,
            show_default=True,
            help="Depth change threshold; 0 is lossless.",
        ),
        click.option(
            "--enlargement",
            type=float,
            default=DEFAULT_ENLARGEMENT,
            show_default=True,
            help="Quad enlargement factor.",
        ),
        click.option(
            "--orientation",
            type=click.Choice(ORIENTATIONS),
            default="billboard",
            show_default=True,
            help="How quads face the virtual camera.",
        ),
        click.option(
            "--render-every",
            type=int,
            default=30,
            show_default=True,
            help="Render every N frames; 0 disables rendering.",
        ),
        click.option(
            "-o",
            "--output-dir",
            type=click.Path(file_okay=False, path_type=Path),
            default=None,
            help="Where renders and reports are written.",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _session_config(
    params: Dict[str, Any], channel: Optional[ChannelConfig] = None
) -> SessionConfig:
    return SessionConfig(
        preset=params["preset"],
        cameras=params.get("cameras", 1),
        redundancy=params["redundancy"],
        channel=channel or ChannelConfig(),
        seed=params["seed"],
        frame_count=params.get("frames", 300),
        output_dir=params["output_dir"],
        enlargement=params["enlargement"],
        orientation=params["orientation"],
        render_every=params["render_every"],
        change_threshold_mm=params["threshold_mm"],
        mtu_payload=params["mtu"],
        audio=params.get("audio", False),
    )


def _load_calibration(
    path: Optional[Path],
) -> Optional[List[CalibrationEntry]]:
    return read_calibration(path) if path is not None else None


@click.group(  # pragma: no cover
    name="rgbd-relay",
    invoke_without_command=True,
    no_args_is_help=True,
)
@click.pass_context
@click.option("-V", "--version", is_flag=True, help="Show the version number.")
@click.option(
    "-v",
    "--verbose",
    count=True,
    help="Log more; repeat for debug output.",
)
@click.option(
    "-c",
    "--config",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="TOML file with [session] and [channel] defaults.",
)
def cli(
    ctx: click.Context, version: bool, verbose: int, config: Optional[Path]
) -> None:
    """Stream RGBD video over lossy networks and view it as quads."""
    if version is True:
        click.echo(f"{ctx.info_name}, version {__version__}")
        ctx.exit()
    logging.basicConfig(
        level=LOG_LEVELS[min(verbose, len(LOG_LEVELS) - 1)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    if config is not None:
        try:
            ctx.default_map = default_map(config)
        except RgbdRelayError as err:
            _fail(err)


@click.command(name="gen-scene")  # pragma: no cover
@click.option(
    "--preset",
    type=click.Choice(sorted(RESOLUTION_PRESETS)),
    default="study",
    show_default=True,
    help="Capture resolution preset.",
)
@click.option("--cameras", type=click.IntRange(1, 2), default=1)
@click.option("--frames", type=click.IntRange(min=1), default=300)
@click.option("--seed", type=SEED, required=True, help="Noise seed.")
@click.option(
    "--noise-mm", type=float, default=0.0, help="Depth noise deviation."
)
@click.option(
    "-o",
    "--output-dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory receiving camera<N>/frame_*.npz files.",
)
def gen_scene_command(
    preset: str,
    cameras: int,
    frames: int,
    seed: int,
    noise_mm: float,
    output_dir: Path,
) -> None:
    """Render the synthetic figure scene to disk."""
    try:
        written = write_scene(
            SceneConfig(preset, cameras, frames, seed, noise_mm), output_dir
        )
    except RgbdRelayError as err:
        _fail(err)
    for directory in written:
        click.echo(f"Wrote {frames} frames to {directory}")


@click.command(name="simulate")  # pragma: no cover
@_session_options
@click.option("--cameras", type=click.IntRange(1, 2), default=1)
@click.option("--frames", type=click.IntRange(min=1), default=300)
@click.option(
    "--loss", type=click.FloatRange(0.0, 1.0), default=0.0, show_default=True
)
@click.option("--latency-us", type=int, default=0, help="Mean latency.")
@click.option("--jitter-us", type=int, default=0, help="Latency jitter.")
@click.option(
    "--reorder/--no-reorder",
    default=False,
    help="Let jitter reorder datagrams.",
)
@click.option("--channel-seed", type=SEED, default=0, help="Loss seed.")
@click.option("--audio", is_flag=True, help="Send audio stub packets too.")
def simulate_command(**params: Any) -> None:
    """Run the whole pipeline over a simulated lossy channel."""
    try:
        channel = ChannelConfig(
            loss_probability=params["loss"],
            mean_latency_micros=params["latency_us"],
            jitter_micros=params["jitter_us"],
            reordering_allowed=params["reorder"],
            seed=params["channel_seed"],
        )
        report = run_session(_session_config(params, channel))
    except RgbdRelayError as err:
        _fail(err)
    _echo_json(report.summary)
    if not report.ok:
        click.echo("Decoded depth differs from the encoder side.", err=True)
        raise SystemExit(1)


def _frame_source(
    input_dir: Optional[Path], params: Dict[str, Any], session_id: int
) -> Iterable[RgbdFrame]:
    if input_dir is not None:
        return FileFrameSource(camera_directory(input_dir, session_id))
    scene = SyntheticScene(
        SceneConfig(params["preset"], 1, params["frames"], params["seed"])
    )
    return scene.frames(0)


@click.command(name="transmit")  # pragma: no cover
@_session_options
@click.option("--frames", type=click.IntRange(min=1), default=300)
@click.option(
    "--peer", required=True, help="Viewer address as HOST:PORT."
)
@click.option("--session-id", type=int, default=1, show_default=True)
@click.option(
    "--input-dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="Scene written by gen-scene; the synthetic scene otherwise.",
)
@click.option("--no-pace", is_flag=True, help="Send as fast as possible.")
def transmit_command(**params: Any) -> None:
    """Send frames to a viewer over UDP."""
    peer = _address(params["peer"])
    try:
        frames = _frame_source(
            params["input_dir"], params, params["session_id"]
        )
        with UdpChannel(bind=("0.0.0.0", 0), peer=peer) as channel:
            stats = transmit_live(
                _session_config(params),
                channel,
                frames,
                session_id=params["session_id"],
                paced=not params["no_pace"],
            )
    except RgbdRelayError as err:
        _fail(err)
    click.echo(
        f"Sent {stats.frames} frames in {stats.datagrams} datagrams "
        f"({stats.bytes} bytes) to {peer[0]}:{peer[1]}"
    )


@click.command(name="receive")  # pragma: no cover
@_session_options
@click.option(
    "--bind",
    default="127.0.0.1:5004",
    show_default=True,
    help="Local address as HOST:PORT.",
)
@click.option(
    "--idle-timeout",
    type=float,
    default=2.0,
    show_default=True,
    help="Stop after this many seconds without traffic.",
)
@click.option("--max-frames", type=int, default=None)
@click.option(
    "--calibration",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Calibration file placing additional transmitters.",
)
def receive_command(**params: Any) -> None:
    """Receive frames over UDP and render them."""
    bind = _address(params["bind"])
    try:
        with UdpChannel(bind=bind) as channel:
            host, port = channel.address
            click.echo(f"Listening on {host}:{port}")
            stats = receive_live(
                _session_config(params),
                channel,
                idle_timeout=params["idle_timeout"],
                max_frames=params["max_frames"],
                calibration=_load_calibration(params["calibration"]),
                output_dir=params["output_dir"],
            )
    except RgbdRelayError as err:
        _fail(err)
    click.echo(
        f"Decoded {stats.frames} frames from {stats.datagrams} datagrams, "
        f"rendered {stats.renders}, {stats.malformed} malformed"
    )


@click.command(name="render")  # pragma: no cover
@_session_options
@click.option("--cameras", type=click.IntRange(1, 2), default=1)
@click.option("--frame", "frame_id", type=click.IntRange(min=0), default=0)
@click.option(
    "--eye",
    type=float,
    nargs=3,
    default=(1.8, 1.5, 0.0),
    show_default=True,
    help="Virtual camera position.",
)
@click.option("--hfov", type=float, default=60.0, show_default=True)
@click.option("--ply", is_flag=True, help="Also export the quads as PLY.")
def render_command(**params: Any) -> None:
    """Render one frame of the synthetic scene from a virtual camera."""
    output_dir = params["output_dir"] or Path(".")
    frame_id = params["frame_id"]
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        scene = SyntheticScene(
            SceneConfig(
                params["preset"],
                params["cameras"],
                frame_id + 1,
                params["seed"],
            )
        )
        viewer = Viewer(
            ViewerConfig(
                enlargement=params["enlargement"],
                orientation=params["orientation"],
            ),
            calibration=(
                scene.calibration() if params["cameras"] > 1 else None
            ),
        )
        for index, cam in enumerate(scene.cameras):
            transmitter = Transmitter(
                TransmitterConfig(
                    session_id=cam.session_id,
                    redundancy=params["redundancy"],
                    seed=params["seed"],
                    mtu_payload=params["mtu"],
                    change_threshold_mm=params["threshold_mm"],
                )
            )
            encoded = transmitter.process(scene.render(index, frame_id))
            for packet in encoded.packets:
                viewer.receive_packet(packet)
        _, (dw, dh) = RESOLUTION_PRESETS[params["preset"]]
        intr = intrinsics_for(dw, dh, params["hfov"])
        pose = look_at(params["eye"], FIGURE_CENTER)
        color, _, coverage = viewer.render(intr, pose)
        image = output_dir / f"render_{frame_id:05d}.ppm"
        write_ppm(color, image)
        click.echo(f"Wrote {image} (coverage {coverage:.3f})")
        if params["ply"]:
            for cloud, sid in zip(
                viewer.quad_clouds(pose.position()), sorted(viewer.streams)
            ):
                mesh = output_dir / f"quads_{sid}_{frame_id:05d}.ply"
                export_ply(cloud, mesh)
                click.echo(f"Wrote {mesh} ({len(cloud)} quads)")
    except (RgbdRelayError, OSError) as err:
        _fail(err)


@click.command(name="bench-codec")  # pragma: no cover
@click.option(
    "--preset",
    type=click.Choice(sorted(RESOLUTION_PRESETS)),
    default="study",
    show_default=True,
)
@click.option("--frames", type=click.IntRange(min=1), default=60)
@click.option("--seed", type=SEED, required=True)
@click.option("--threshold-mm", type=click.IntRange(min=0), default=0)
def bench_codec_command(
    preset: str, frames: int, seed: int, threshold_mm: int
) -> None:
    """Measure depth codec size and speed on the synthetic scene."""
    try:
        result = bench_codec(preset, frames, seed, threshold_mm)
    except RgbdRelayError as err:
        _fail(err)
    _echo_json(result)


@click.command(name="bench-fec")  # pragma: no cover
@click.option("-k", "--blocks", type=click.IntRange(min=1), default=100)
@click.option("--redundancy", type=float, default=DEFAULT_REDUNDANCY)
@click.option("--loss", type=click.FloatRange(0.0, 1.0), default=0.2)
@click.option("--trials", type=click.IntRange(min=1), default=1000)
@click.option("--seed", type=SEED, required=True)
@click.option(
    "--received",
    type=click.IntRange(min=1),
    default=None,
    help="Deliver exactly this many packets instead of applying --loss.",
)
def bench_fec_command(
    blocks: int,
    redundancy: float,
    loss: float,
    trials: int,
    seed: int,
    received: Optional[int],
) -> None:
    """Measure fountain code recovery under random loss."""
    try:
        result = bench_fec(blocks, redundancy, loss, trials, seed, received)
    except ValueError as err:
        _fail(err)
    _echo_json(result)


@click.group(name="rooms")  # pragma: no cover
@click.option(
    "--server",
    default="127.0.0.1:5005",
    show_default=True,
    help="Signaling server as HOST:PORT.",
)
@click.pass_context
def rooms_group(ctx: click.Context, server: str) -> None:
    """Manage rooms on a signaling server."""
    ctx.obj = _address(server)


@click.command(name="serve")  # pragma: no cover
@click.option("--seed", type=SEED, default=0, help="Room id seed.")
@click.pass_obj
def rooms_serve(address: Tuple[str, int], seed: int) -> None:
    """Run the signaling server until interrupted."""
    try:
        server = SignalingServer(address, RoomService(seed))
    except OSError as err:
        _fail(err)
    with server:
        host, port = server.server_address[:2]
        click.echo(f"Signaling on {host}:{port}")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            click.echo("Stopped")


def _client(address: Tuple[str, int]) -> SignalingClient:
    return SignalingClient(*address)


@click.command(name="create")  # pragma: no cover
@click.pass_obj
def rooms_create(address: Tuple[str, int]) -> None:
    """Create a room and print its id."""
    try:
        with _client(address) as client:
            click.echo(client.create_room())
    except RgbdRelayError as err:
        _fail(err)


@click.command(name="join")  # pragma: no cover
@click.argument("room_id")
@click.argument("role", type=click.Choice(["transmitter", "viewer"]))
@click.pass_obj
def rooms_join(address: Tuple[str, int], room_id: str, role: str) -> None:
    """Join a room and print the membership token."""
    try:
        with _client(address) as client:
            membership = client.join_room(room_id, role)
    except RgbdRelayError as err:
        _fail(err)
    suffix = " (additional transmitter)" if membership.additional else ""
    click.echo(f"{membership.token}{suffix}")


@click.command(name="list")  # pragma: no cover
@click.pass_obj
def rooms_list(address: Tuple[str, int]) -> None:
    """List the rooms on the server."""
    try:
        with _client(address) as client:
            rooms = client.list_rooms()
    except RgbdRelayError as err:
        _fail(err)
    click.echo(f"{len(rooms)} rooms.")
    for room in rooms:
        click.echo(
            f"{room.room_id}: {room.transmitters} transmitters, "
            f"{room.viewers} viewers"
        )


@click.command(name="leave")  # pragma: no cover
@click.argument("token")
@click.pass_obj
def rooms_leave(address: Tuple[str, int], token: str) -> None:
    """Leave a room."""
    try:
        with _client(address) as client:
            client.leave_room(token)
    except RgbdRelayError as err:
        _fail(err)
    click.echo(f"Left with {token}")


# Add subcommands to the main command
rooms_group.add_command(rooms_serve)
rooms_group.add_command(rooms_create)
rooms_group.add_command(rooms_join)
rooms_group.add_command(rooms_list)
rooms_group.add_command(rooms_leave)

cli.add_command(gen_scene_command)
cli.add_command(simulate_command)
cli.add_command(transmit_command)
cli.add_command(receive_command)
cli.add_command(render_command)
cli.add_command(bench_codec_command)
cli.add_command(bench_fec_command)
cli.add_command(rooms_group)


def main() -> None:
    """Main entry point for the CLI."""
    cli()  # pragma: no cover


if __name__ == "__main__":
    main()  # pragma: no cover
