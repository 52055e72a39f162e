"""Tests for the config module."""

from pathlib import Path

import pytest

from rgbd_relay.config import (
    SESSION_COMMANDS,
    SessionConfig,
    default_map,
    load_config_file,
)
from rgbd_relay.errors import ConfigError, IoFailureError


CONFIG = """
[session]
preset = "default"
redundancy = 0.25
seed = 9
frame_count = 120
change_threshold_mm = 4

[channel]
loss_probability = 0.1
mean_latency_micros = 20000
reordering_allowed = true
"""


def test_load_config_file(tmp_path: Path) -> None:
    """Test TOML keys become command-line parameter names."""
    path = tmp_path / "session.toml"
    path.write_text(CONFIG)
    assert load_config_file(path) == {
        "preset": "default",
        "redundancy": 0.25,
        "seed": 9,
        "frames": 120,
        "threshold_mm": 4,
        "loss": 0.1,
        "latency_us": 20000,
        "reorder": True,
    }


def test_default_map_covers_session_commands(tmp_path: Path) -> None:
    """Test every session command receives the same defaults."""
    path = tmp_path / "session.toml"
    path.write_text("[session]\nseed = 3\n")
    mapping = default_map(path)
    assert sorted(mapping) == sorted(SESSION_COMMANDS)
    assert all(values == {"seed": 3} for values in mapping.values())
    mapping["simulate"]["seed"] = 4
    assert mapping["render"]["seed"] == 3


@pytest.mark.parametrize(
    "text",
    [
        "[session]\ncolour = 1\n",
        "[network]\nloss = 1\n",
        "session = 3\n",
        "[session\n",
    ],
)
def test_bad_config_files(tmp_path: Path, text: str) -> None:
    """Test unknown keys, unknown tables and invalid TOML."""
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config_file(path)


def test_missing_config_file(tmp_path: Path) -> None:
    """Test an absent file."""
    with pytest.raises(IoFailureError):
        load_config_file(tmp_path / "absent.toml")


def test_session_config_validation() -> None:
    """Test session settings checks."""
    assert SessionConfig().frame_count == 300
    with pytest.raises(ConfigError):
        SessionConfig(preset="tiny")
    with pytest.raises(ConfigError):
        SessionConfig(cameras=0)
    with pytest.raises(ConfigError):
        SessionConfig(redundancy=-0.5)
    with pytest.raises(ConfigError):
        SessionConfig(render_every=-1)
