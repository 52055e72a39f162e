"""Exceptions for the rgbd_relay package."""


class RgbdRelayError(Exception):
    """Base class for every error raised by the package."""

    pass


class DimensionMismatchError(RgbdRelayError):
    """Raised when image sizes disagree with their declared dimensions."""

    pass


class InvalidIntrinsicsError(RgbdRelayError):
    """Raised when camera intrinsics are out of range."""

    pass


class FrameOrderError(RgbdRelayError):
    """Raised when frame ids stop increasing on a stream."""

    pass


class InvalidPoseError(RgbdRelayError):
    """Raised when a pose rotation is not a unit quaternion."""

    pass


class InvalidPlaneError(RgbdRelayError):
    """Raised when a floor plane normal is not unit length or faces down."""

    pass


class TruncatedStreamError(RgbdRelayError):
    """Raised when a coded stream ends in the middle of a value."""

    pass


class RunOverflowError(RgbdRelayError):
    """Raised when decoded runs exceed the pixel count."""

    pass


class UnknownCodecIdError(RgbdRelayError):
    """Raised when a color stream carries an unsupported codec id."""

    pass


class InvalidRangeError(RgbdRelayError):
    """Raised when a depth range has near >= far."""

    pass


class NoFloorFoundError(RgbdRelayError):
    """Raised when no candidate floor plane gathers enough inliers."""

    pass


class MissingFirstTransmitterError(RgbdRelayError):
    """Raised when calibration lacks an identity first transmitter."""

    pass


class DegenerateDirectionError(RgbdRelayError):
    """Raised when the anchor sits horizontally on top of the viewer."""

    pass


class EmptyMessageError(RgbdRelayError):
    """Raised when packetizing an empty message."""

    pass


class InconsistentHeaderError(RgbdRelayError):
    """Raised when a packet header disagrees with its frame workspace."""

    pass


class PayloadLengthError(RgbdRelayError):
    """Raised when a packet payload length differs from its header."""

    pass


class MalformedPacketError(RgbdRelayError):
    """Raised when a datagram is not a valid packet."""

    pass


class MalformedMessageError(RgbdRelayError):
    """Raised when a recovered video message cannot be parsed."""

    pass


class UnknownRoomError(RgbdRelayError):
    """Raised when a room id is not registered."""

    pass


class UnknownMemberError(RgbdRelayError):
    """Raised when a membership token is not registered."""

    pass


class SignalingError(RgbdRelayError):
    """Raised when the signaling server replies with an error."""

    pass


class IoFailureError(RgbdRelayError):
    """Raised when reading or writing a file fails."""

    pass


class ConfigError(RgbdRelayError):
    """Raised when a configuration value is out of range."""

    pass


class SessionError(RgbdRelayError):
    """Raised when a pipeline stage fails for a given frame."""

    def __init__(self, frame_id: int, cause: Exception) -> None:
        """Wrap a stage error with its frame id.

        Args:
            frame_id (int): The frame being processed.
            cause (Exception): The original error.
        """
        super().__init__(f"frame {frame_id}: {cause}")
        self.frame_id = frame_id
        self.cause = cause
