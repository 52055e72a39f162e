"""Room signaling: an in-process service plus a line protocol over TCP.

Protocol, one request per line, one JSON reply per line::

    CREATE                 -> {"ok": true, "room": "K3Q9ZX"}
    JOIN <room> <role>     -> {"ok": true, "token": "...", "additional": false}
    LIST                   -> {"ok": true, "rooms": [{...}, ...]}
    LEAVE <token>          -> {"ok": true}

Failures reply ``{"ok": false, "error": "<ErrorClass>", "message": "..."}``.
"""

import json
import logging
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

import numpy as np

from rgbd_relay.constants import (
    ROOM_ID_ALPHABET,
    ROOM_ID_LENGTH,
    ROOM_UNCLAIMED_SECONDS,
)
from rgbd_relay.errors import (
    IoFailureError,
    SignalingError,
    UnknownMemberError,
    UnknownRoomError,
)


logger = logging.getLogger(__name__)

ROLES = ("transmitter", "viewer")


@dataclass
class Room:
    """Members of one call or broadcast."""

    room_id: str
    created: float
    transmitter_ids: List[str] = field(default_factory=list)
    viewer_ids: List[str] = field(default_factory=list)

    @property
    def member_count(self) -> int:
        """Transmitters plus viewers."""
        return len(self.transmitter_ids) + len(self.viewer_ids)


@dataclass(frozen=True)
class Membership:
    """Result of joining a room."""

    token: str
    room_id: str
    role: str
    additional: bool


@dataclass(frozen=True)
class RoomSummary:
    """What ``LIST`` reports for a room."""

    room_id: str
    transmitters: int
    viewers: int
    created: float


class RoomService:
    """Thread-safe registry of rooms.

    A room that nobody has joined within ``unclaimed_ttl`` seconds of its
    creation is dropped.

    Args:
        seed (int): Seed of the room id generator.
        clock (callable): Source of creation timestamps.
        unclaimed_ttl (float): Lifetime of a room without members.
    """

    def __init__(
        self,
        seed: int = 0,
        clock: Callable[[], float] = time.time,
        unclaimed_ttl: float = ROOM_UNCLAIMED_SECONDS,
    ) -> None:
        """Start with no rooms."""
        if unclaimed_ttl <= 0:
            raise ValueError(
                f"Unclaimed room lifetime must be positive, got {unclaimed_ttl}"
            )
        self._lock = threading.Lock()
        self._rng = np.random.default_rng(seed)
        self._clock = clock
        self._unclaimed_ttl = unclaimed_ttl
        self._rooms: Dict[str, Room] = {}
        self._members: Dict[str, Membership] = {}
        self._unclaimed: Deque[Tuple[float, str]] = deque()
        self._next_member = 0

    def _new_room_id(self) -> str:
        alphabet = np.array(list(ROOM_ID_ALPHABET))
        while True:
            picks = self._rng.integers(0, len(alphabet), ROOM_ID_LENGTH)
            room_id = "".join(alphabet[picks])
            if room_id not in self._rooms:
                return room_id

    def _expire_unclaimed(self) -> None:
        deadline = self._clock() - self._unclaimed_ttl
        while self._unclaimed and self._unclaimed[0][0] < deadline:
            created, room_id = self._unclaimed.popleft()
            room = self._rooms.get(room_id)
            if (
                room is not None
                and room.created == created
                and room.member_count == 0
            ):
                del self._rooms[room_id]
                logger.info("Room %s was never joined, removed", room_id)

    def create_room(self) -> str:
        """Register an empty room and return its id."""
        with self._lock:
            self._expire_unclaimed()
            room_id = self._new_room_id()
            created = self._clock()
            self._rooms[room_id] = Room(room_id, created)
            self._unclaimed.append((created, room_id))
        logger.info("Created room %s", room_id)
        return room_id

    def join_room(self, room_id: str, role: str) -> Membership:
        """Add a transmitter or viewer to a room.

        Transmitters after the first are flagged ``additional``; their
        frames need calibration before they can be placed.

        Raises:
            UnknownRoomError: If the room does not exist.
            ValueError: If ``role`` is not a known role.
        """
        if role not in ROLES:
            raise ValueError(f"Role must be one of {ROLES}, got {role!r}")
        with self._lock:
            self._expire_unclaimed()
            room = self._rooms.get(room_id)
            if room is None:
                raise UnknownRoomError(f"No room {room_id!r}")
            self._next_member += 1
            member_id = f"{role[0]}{self._next_member}"
            token = f"{room_id}.{member_id}"
            if role == "transmitter":
                additional = bool(room.transmitter_ids)
                room.transmitter_ids.append(member_id)
            else:
                additional = False
                room.viewer_ids.append(member_id)
            membership = Membership(token, room_id, role, additional)
            self._members[token] = membership
        logger.info("%s joined room %s as %s", member_id, room_id, role)
        return membership

    def list_rooms(self) -> List[RoomSummary]:
        """Summaries of every live room in creation order."""
        with self._lock:
            self._expire_unclaimed()
            return [
                RoomSummary(
                    room.room_id,
                    len(room.transmitter_ids),
                    len(room.viewer_ids),
                    room.created,
                )
                for room in self._rooms.values()
            ]

    def leave_room(self, token: str) -> None:
        """Remove a member; a room is dropped when its last member leaves.

        Raises:
            UnknownMemberError: If the token is not registered.
        """
        with self._lock:
            membership = self._members.pop(token, None)
            if membership is None:
                raise UnknownMemberError(f"No member with token {token!r}")
            room = self._rooms[membership.room_id]
            member_id = token.split(".", 1)[1]
            if membership.role == "transmitter":
                room.transmitter_ids.remove(member_id)
            else:
                room.viewer_ids.remove(member_id)
            if room.member_count == 0:
                del self._rooms[room.room_id]
                logger.info("Room %s is empty and was removed", room.room_id)

    def handle_line(self, line: str) -> Dict[str, Any]:
        """Execute one protocol request and build its reply."""
        parts = line.split()
        try:
            if not parts:
                raise SignalingError("Empty request")
            verb, args = parts[0].upper(), parts[1:]
            if verb == "CREATE" and not args:
                return {"ok": True, "room": self.create_room()}
            if verb == "JOIN" and len(args) == 2:
                joined = self.join_room(args[0], args[1])
                return {
                    "ok": True,
                    "token": joined.token,
                    "additional": joined.additional,
                }
            if verb == "LIST" and not args:
                rooms = [asdict(summary) for summary in self.list_rooms()]
                return {"ok": True, "rooms": rooms}
            if verb == "LEAVE" and len(args) == 1:
                self.leave_room(args[0])
                return {"ok": True}
            raise SignalingError(f"Malformed request {line.strip()!r}")
        except (SignalingError, UnknownRoomError, UnknownMemberError) as err:
            return {
                "ok": False,
                "error": type(err).__name__,
                "message": str(err),
            }
        except ValueError as err:
            return {"ok": False, "error": "SignalingError", "message": str(err)}


class _SignalingHandler(socketserver.StreamRequestHandler):
    server: "SignalingServer"

    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            reply = self.server.service.handle_line(line)
            self.wfile.write(json.dumps(reply).encode("utf-8") + b"\n")
            self.wfile.flush()


class SignalingServer(socketserver.ThreadingTCPServer):
    """TCP front end of a :class:`RoomService`."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(
        self, address: Tuple[str, int], service: Optional[RoomService] = None
    ) -> None:
        """Bind the listening socket."""
        self.service = service or RoomService()
        super().__init__(address, _SignalingHandler)


_ERRORS = {
    "UnknownRoomError": UnknownRoomError,
    "UnknownMemberError": UnknownMemberError,
}


class SignalingClient:
    """Blocking client for :class:`SignalingServer`."""

    def __init__(self, host: str, port: int, timeout: float = 5.0) -> None:
        """Connect to the server.

        Raises:
            IoFailureError: If the connection fails.
        """
        try:
            self._sock = socket.create_connection((host, port), timeout)
        except OSError as exc:
            raise IoFailureError(
                f"Cannot reach signaling server {host}:{port}: {exc}"
            ) from exc
        self._file = self._sock.makefile("rwb")

    def request(self, line: str) -> Dict[str, Any]:
        """Send a raw request line and return the decoded reply.

        Raises:
            UnknownRoomError: If the server reports an unknown room.
            UnknownMemberError: If the server reports an unknown token.
            SignalingError: For any other failure reply.
        """
        try:
            self._file.write(line.encode("utf-8") + b"\n")
            self._file.flush()
            raw = self._file.readline()
        except OSError as exc:
            raise IoFailureError(f"Signaling request failed: {exc}") from exc
        if not raw:
            raise SignalingError("Signaling server closed the connection")
        reply: Dict[str, Any] = json.loads(raw)
        if not reply.get("ok"):
            error = _ERRORS.get(reply.get("error", ""), SignalingError)
            raise error(reply.get("message", "request failed"))
        return reply

    def create_room(self) -> str:
        """Create a room on the server."""
        return str(self.request("CREATE")["room"])

    def join_room(self, room_id: str, role: str) -> Membership:
        """Join a room on the server."""
        reply = self.request(f"JOIN {room_id} {role}")
        return Membership(
            reply["token"], room_id, role, bool(reply["additional"])
        )

    def list_rooms(self) -> List[RoomSummary]:
        """List rooms on the server."""
        return [RoomSummary(**room) for room in self.request("LIST")["rooms"]]

    def leave_room(self, token: str) -> None:
        """Leave a room on the server."""
        self.request(f"LEAVE {token}")

    def close(self) -> None:
        """Close the connection."""
        self._file.close()
        self._sock.close()

    def __enter__(self) -> "SignalingClient":
        """Use as a context manager."""
        return self

    def __exit__(self, *exc_info: object) -> None:
        """Close on exit."""
        self.close()
