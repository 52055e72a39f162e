"""Datagram channels: a seeded lossy simulator and a UDP binding.

Both channels move opaque datagrams (serialized :class:`FecPacket` bytes)
with the same ``send``/``poll`` contract, so the pipeline can run against
either one.
"""

import heapq
import logging
import socket
from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

import numpy as np

from rgbd_relay.errors import ConfigError, IoFailureError


logger = logging.getLogger(__name__)

MAX_DATAGRAM = 65_535


@dataclass(frozen=True)
class ChannelConfig:
    """Loss and latency model of a simulated channel."""

    loss_probability: float = 0.0
    mean_latency_micros: int = 0
    jitter_micros: int = 0
    reordering_allowed: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigError(
                f"loss_probability must be in [0, 1], got "
                f"{self.loss_probability}"
            )
        if self.mean_latency_micros < 0 or self.jitter_micros < 0:
            raise ConfigError("Latency and jitter must be non-negative")


@dataclass(frozen=True)
class ChannelStats:
    """Counters of a channel; ``sent == delivered + lost + in_flight``."""

    sent: int
    delivered: int
    lost: int
    in_flight: int


class DatagramChannel(Protocol):
    """Unreliable, bounded-size datagram delivery."""

    def send(self, datagram: bytes, now_micros: int) -> None:
        """Hand one datagram to the channel."""
        ...

    def poll(self, now_micros: int) -> List[bytes]:
        """Return every datagram deliverable by ``now_micros``."""
        ...


class LossyChannel:
    """Deterministic simulator of an unreliable datagram path.

    Every datagram draws one loss sample and one jitter sample from the
    seeded generator, whether or not it survives, so a delivery trace only
    depends on the configuration and the send schedule.
    """

    def __init__(self, config: ChannelConfig) -> None:
        """Create a channel with an empty queue."""
        self.config = config
        self._rng = np.random.default_rng(config.seed)
        self._queue: List[Tuple[int, int, bytes]] = []
        self._sequence = 0
        self._last_delivery = 0
        self._now = 0
        self._sent = 0
        self._delivered = 0
        self._lost = 0

    def _advance(self, now_micros: int) -> None:
        if now_micros < self._now:
            raise ValueError(
                f"Simulator time went backwards: {now_micros} < {self._now}"
            )
        self._now = now_micros

    def send(self, datagram: bytes, now_micros: int) -> None:
        """Queue a datagram, dropping it with the configured probability."""
        self._advance(now_micros)
        self._sent += 1
        cfg = self.config
        lost = self._rng.random() < cfg.loss_probability
        jitter = self._rng.uniform(-1.0, 1.0) * cfg.jitter_micros
        if lost:
            self._lost += 1
            return
        delivery = now_micros + max(
            0, int(round(cfg.mean_latency_micros + jitter))
        )
        if not cfg.reordering_allowed:
            delivery = max(delivery, self._last_delivery)
        self._last_delivery = max(self._last_delivery, delivery)
        heapq.heappush(self._queue, (delivery, self._sequence, bytes(datagram)))
        self._sequence += 1

    def poll(self, now_micros: int) -> List[bytes]:
        """Pop every datagram due by ``now_micros`` in delivery order."""
        self._advance(now_micros)
        out = []
        while self._queue and self._queue[0][0] <= now_micros:
            out.append(heapq.heappop(self._queue)[2])
        self._delivered += len(out)
        return out

    def drain(self) -> List[bytes]:
        """Deliver everything still in flight."""
        if not self._queue:
            return []
        last = max(item[0] for item in self._queue)
        return self.poll(max(self._now, last))

    def next_delivery(self) -> Optional[int]:
        """Time of the earliest queued datagram."""
        return self._queue[0][0] if self._queue else None

    @property
    def stats(self) -> ChannelStats:
        """Current counters."""
        return ChannelStats(
            sent=self._sent,
            delivered=self._delivered,
            lost=self._lost,
            in_flight=len(self._queue),
        )


class UdpChannel:
    """Same contract over a non-blocking UDP socket.

    Args:
        bind (tuple): Local ``(host, port)`` to receive on.
        peer (tuple, optional): Remote ``(host, port)`` datagrams go to.
    """

    def __init__(
        self,
        bind: Tuple[str, int] = ("127.0.0.1", 0),
        peer: Optional[Tuple[str, int]] = None,
    ) -> None:
        """Open and bind the socket."""
        self.peer = peer
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.bind(bind)
            self._sock.setblocking(False)
        except OSError as exc:
            raise IoFailureError(f"Cannot bind UDP {bind}: {exc}") from exc
        self.sent = 0
        self.delivered = 0

    @property
    def address(self) -> Tuple[str, int]:
        """Bound local address."""
        host, port = self._sock.getsockname()[:2]
        return str(host), int(port)

    def send(self, datagram: bytes, now_micros: int = 0) -> None:
        """Send one datagram to the peer."""
        if self.peer is None:
            raise ConfigError("UdpChannel has no peer to send to")
        try:
            self._sock.sendto(datagram, self.peer)
        except OSError as exc:
            raise IoFailureError(f"UDP send failed: {exc}") from exc
        self.sent += 1

    def poll(self, now_micros: int = 0) -> List[bytes]:
        """Read every datagram waiting on the socket."""
        out = []
        while True:
            try:
                data, _ = self._sock.recvfrom(MAX_DATAGRAM)
            except BlockingIOError:
                break
            except OSError as exc:
                raise IoFailureError(f"UDP receive failed: {exc}") from exc
            out.append(data)
        self.delivered += len(out)
        return out

    def close(self) -> None:
        """Close the socket."""
        self._sock.close()

    def __enter__(self) -> "UdpChannel":
        """Use as a context manager."""
        return self

    def __exit__(self, *exc_info: object) -> None:
        """Close on exit."""
        self.close()
