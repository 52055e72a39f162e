"""Constants for the rgbd_relay package."""

from typing import Dict, Tuple


# Resolution presets as ((color_w, color_h), (depth_w, depth_h)).
# "study" keeps the literal 720x360 / 320x180 pair even though 720x360 is
# not half of 1280x720 in width.
RESOLUTION_PRESETS: Dict[str, Tuple[Tuple[int, int], Tuple[int, int]]] = {
    "default": ((1280, 720), (640, 360)),
    "study": ((720, 360), (320, 180)),
}

DEPTH_HFOV_DEGREES = 75.0
COLOR_HFOV_DEGREES = 90.0

FRAME_INTERVAL_MICROS = 33_333
KEYFRAME_INTERVAL = 64
REASSEMBLY_HORIZON = 64
FLOOR_MEDIAN_WINDOW = 30

DEFAULT_ENLARGEMENT = 1.2
DEFAULT_REDUNDANCY = 0.5

# Packet header: "<2sBBIIHHIIH10x", little-endian, 36 bytes.
PACKET_MAGIC = b"TG"
PACKET_VERSION = 1
PACKET_HEADER_FORMAT = "<2sBBIIHHIIH10x"
PACKET_HEADER_SIZE = 36
PACKET_RESERVED_OFFSET = 26  # ten zero bytes close the header
DATAGRAM_SIZE = 1200
DEFAULT_MTU_PAYLOAD = DATAGRAM_SIZE - PACKET_HEADER_SIZE
PACKET_TYPE_VIDEO = 0
PACKET_TYPE_AUDIO = 1
PACKET_TYPES = (PACKET_TYPE_VIDEO, PACKET_TYPE_AUDIO)

# Video message header: frame id, keyframe, color w/h, depth w/h, floor,
# color length, depth length.
MESSAGE_HEADER_FORMAT = "<IBHHHH4fII"

GF256_POLYNOMIAL = 0x11B

SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
SPLITMIX_MUL2 = 0x94D049BB133111EB
UINT64_MASK = 0xFFFFFFFFFFFFFFFF

COLOR_CODEC_REFERENCE = 0
COLOR_CODEC_RESERVED = 1

ROOM_ID_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
ROOM_ID_LENGTH = 6
ROOM_UNCLAIMED_SECONDS = 300.0  # rooms nobody joined are dropped after this
