"""Session settings and TOML config files."""

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

from rgbd_relay.constants import (
    DEFAULT_ENLARGEMENT,
    DEFAULT_MTU_PAYLOAD,
    DEFAULT_REDUNDANCY,
    KEYFRAME_INTERVAL,
    RESOLUTION_PRESETS,
)
from rgbd_relay.errors import ConfigError, IoFailureError
from rgbd_relay.transport import ChannelConfig


if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


# TOML keys of each table mapped to command-line parameter names.
SESSION_KEYS = {
    "preset": "preset",
    "cameras": "cameras",
    "redundancy": "redundancy",
    "seed": "seed",
    "frame_count": "frames",
    "output_dir": "output_dir",
    "enlargement": "enlargement",
    "orientation": "orientation",
    "render_every": "render_every",
    "change_threshold_mm": "threshold_mm",
    "mtu_payload": "mtu",
    "audio": "audio",
}
CHANNEL_KEYS = {
    "loss_probability": "loss",
    "mean_latency_micros": "latency_us",
    "jitter_micros": "jitter_us",
    "reordering_allowed": "reorder",
    "seed": "channel_seed",
}
SESSION_COMMANDS = ("simulate", "transmit", "receive", "render")


@dataclass(frozen=True)
class SessionConfig:
    """Everything one simulated or live session needs."""

    preset: str = "study"
    cameras: int = 1
    redundancy: float = DEFAULT_REDUNDANCY
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    seed: int = 0
    frame_count: int = 300
    output_dir: Optional[Path] = None
    enlargement: float = DEFAULT_ENLARGEMENT
    orientation: str = "billboard"
    render_every: int = 30
    change_threshold_mm: int = 0
    keyframe_interval: int = KEYFRAME_INTERVAL
    mtu_payload: int = DEFAULT_MTU_PAYLOAD
    audio: bool = False

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.preset not in RESOLUTION_PRESETS:
            raise ConfigError(f"Unknown preset {self.preset!r}")
        if self.cameras not in (1, 2):
            raise ConfigError(f"cameras must be 1 or 2, got {self.cameras}")
        if self.redundancy < 0:
            raise ConfigError("redundancy must be non-negative")
        if self.frame_count < 1:
            raise ConfigError("frame_count must be at least 1")
        if self.render_every < 0:
            raise ConfigError("render_every must be non-negative")


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a TOML file into flat command-line defaults.

    Args:
        path (str): File with optional ``[session]`` and ``[channel]``
            tables.

    Returns:
        dict: Parameter name to value, ready for a click ``default_map``.

    Raises:
        IoFailureError: If the file cannot be read.
        ConfigError: If it is not valid TOML or has unknown keys.
    """
    try:
        with open(path, "rb") as handle:
            document = tomllib.load(handle)
    except OSError as exc:
        raise IoFailureError(f"Cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Invalid config {path}: {exc}") from exc

    defaults: Dict[str, Any] = {}
    for table, keys in (("session", SESSION_KEYS), ("channel", CHANNEL_KEYS)):
        values = document.pop(table, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{table}] must be a table")
        for key, value in values.items():
            if key not in keys:
                raise ConfigError(f"Unknown key {key!r} in [{table}]")
            defaults[keys[key]] = value
    if document:
        raise ConfigError(f"Unknown tables {sorted(document)} in {path}")
    return defaults


def default_map(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    """Click ``default_map`` applying a config file to every session command."""
    defaults = load_config_file(path)
    return {command: dict(defaults) for command in SESSION_COMMANDS}
