"""Benchmarks behind the ``bench-codec`` and ``bench-fec`` commands."""

import logging
import time
from typing import Any, Dict, List, Optional

import numpy as np

from rgbd_relay.depth_codec import DepthCodecConfig, DepthDecoder, DepthEncoder
from rgbd_relay.fec import DecoderWorkspace, fountain_encode
from rgbd_relay.geometry import register_depth_to_color
from rgbd_relay.scene import SceneConfig, SyntheticScene
from rgbd_relay.session import completion_oracle


logger = logging.getLogger(__name__)

BLOCK_SIZE = 64


def bench_codec(
    preset: str = "study",
    frame_count: int = 60,
    seed: int = 0,
    change_threshold_mm: int = 0,
) -> Dict[str, Any]:
    """Encode and decode the synthetic scene's depth stream.

    Returns:
        dict: Byte counts, compression ratio, timings and the number of
        frames whose decoded depth differs from the encoder's
        reconstruction (always 0 for a working codec).
    """
    scene = SyntheticScene(SceneConfig(preset, 1, frame_count, seed))
    encoder: Optional[DepthEncoder] = None
    decoder: Optional[DepthDecoder] = None
    sizes: Dict[bool, List[int]] = {True: [], False: []}
    encode_seconds = decode_seconds = 0.0
    mismatches = lossy_pixels = raw_bytes = 0
    for frame in scene.frames(0):
        depth = register_depth_to_color(frame)
        if encoder is None or decoder is None:
            cfg = DepthCodecConfig(
                depth.width, depth.height, change_threshold_mm
            )
            encoder, decoder = DepthEncoder(cfg), DepthDecoder(cfg)
        started = time.perf_counter()
        data, keyframe = encoder.encode(depth)
        encode_seconds += time.perf_counter() - started
        started = time.perf_counter()
        decoded = decoder.decode(data, frame.frame_id, keyframe)
        decode_seconds += time.perf_counter() - started
        sizes[keyframe].append(len(data))
        raw_bytes += depth.data.nbytes
        if decoded != encoder.reconstruction:
            mismatches += 1
        lossy_pixels += int(np.count_nonzero(decoded.data != depth.data))
    coded = sum(sizes[True]) + sum(sizes[False])
    return {
        "frames": frame_count,
        "raw_bytes": raw_bytes,
        "coded_bytes": coded,
        "compression_ratio": round(raw_bytes / coded, 3) if coded else 0.0,
        "mean_keyframe_bytes": _mean(sizes[True]),
        "mean_delta_bytes": _mean(sizes[False]),
        "encode_ms_per_frame": round(1e3 * encode_seconds / frame_count, 3),
        "decode_ms_per_frame": round(1e3 * decode_seconds / frame_count, 3),
        "reconstruction_mismatches": mismatches,
        "pixels_changed_by_threshold": lossy_pixels,
    }


def _mean(values: List[int]) -> Optional[float]:
    return round(sum(values) / len(values), 1) if values else None


def bench_fec(
    k: int = 100,
    redundancy: float = 0.5,
    loss_probability: float = 0.2,
    trials: int = 1000,
    seed: int = 0,
    received: Optional[int] = None,
) -> Dict[str, Any]:
    """Measure recovery of one ``k``-block message over many loss patterns.

    Args:
        k (int): Source blocks per message.
        redundancy (float): Repair fraction.
        loss_probability (float): Independent per-packet loss.
        trials (int): Loss patterns to try.
        seed (int): Seed of the message content and the loss patterns.
        received (int, optional): Deliver exactly this many packets chosen
            at random instead of applying ``loss_probability``.

    Returns:
        dict: Success rate, mean elimination work and the binomial oracle.
    """
    if k < 1 or trials < 1:
        raise ValueError("k and trials must be positive")
    rng = np.random.default_rng(seed)
    blocks = rng.integers(0, 256, (k, BLOCK_SIZE), dtype=np.uint8)
    message = blocks.tobytes()
    packets = fountain_encode(blocks, redundancy, seed)
    n = len(packets)
    if received is not None and not 0 < received <= n:
        raise ValueError(f"received must be in 1..{n}, got {received}")
    successes = operations = 0
    for _ in range(trials):
        if received is None:
            keep = np.flatnonzero(rng.random(n) >= loss_probability)
        else:
            keep = np.sort(rng.choice(n, received, replace=False))
        workspace = DecoderWorkspace.for_packet(packets[0])
        result = None
        for index in keep:
            result = workspace.add(packets[index])
            if result is not None:
                break
        if result == message:
            successes += 1
        operations += workspace.row_operations
    oracle = (
        completion_oracle([(k, n)], loss_probability, trials, seed)
        if received is None
        else None
    )
    logger.info("FEC k=%d n=%d: %d/%d recovered", k, n, successes, trials)
    return {
        "k": k,
        "n": n,
        "trials": trials,
        "success_rate": successes / trials,
        "mean_row_operations": round(operations / trials, 2),
        "oracle_success_rate": oracle,
    }
