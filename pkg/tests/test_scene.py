"""Tests for the scene module."""

import math
from pathlib import Path

import numpy as np
import pytest

from rgbd_relay.errors import ConfigError, IoFailureError
from rgbd_relay.geometry import (
    RansacParams,
    compose_calibration,
    extract_floor,
    read_calibration,
    register_depth_to_color,
)
from rgbd_relay.scene import (
    FileFrameSource,
    SceneConfig,
    SyntheticScene,
    gen_scene,
    load_frame,
    save_frame,
    scene_cameras,
    write_scene,
)


@pytest.fixture(scope="module")
def scene() -> SyntheticScene:
    """Two-camera study scene."""
    return SyntheticScene(SceneConfig("study", cameras=2, frame_count=3))


def test_figure_is_in_view(scene: SyntheticScene) -> None:
    """Test the figure occupies the middle of the first camera."""
    frame = scene.render(0, 0)
    h, w = frame.depth.height, frame.depth.width
    assert 2000 < int(frame.depth.data[h // 2, w // 2]) < 2600
    shirt = np.all(frame.color.data == (200, 60, 60), axis=2)
    assert np.count_nonzero(shirt) > 500


def test_figure_squats(scene: SyntheticScene) -> None:
    """Test consecutive frames differ."""
    assert scene.render(0, 0).depth != scene.render(0, 15).depth


def test_extracted_floor_matches_ground_truth(scene: SyntheticScene) -> None:
    """Test RANSAC recovers the known floor from registered depth."""
    camera = scene.cameras[0]
    frame = scene.render(0, 0)
    registered = register_depth_to_color(frame)
    intr = frame.color_intrinsics.scaled(registered.width, registered.height)
    found = extract_floor(registered, intr, RansacParams())
    truth = camera.floor()
    assert found.distance == pytest.approx(truth.distance, abs=0.01)
    cosine = float(np.dot(found.normal, truth.normal))
    assert math.acos(min(cosine, 1.0)) < 0.02


def test_second_camera_is_yawed_ninety_degrees() -> None:
    """Test the side camera and its calibration."""
    first, second = scene_cameras("study", 2)
    yaw1, _, _ = first.color_pose.euler_yxz()
    yaw2, _, _ = second.color_pose.euler_yxz()
    assert yaw2 - yaw1 == pytest.approx(math.pi / 2)
    assert first.color_intrinsics.width == 720
    assert first.depth_intrinsics.width == 320


def test_calibration_reproduces_camera_poses(scene: SyntheticScene) -> None:
    """Test composing the calibration recovers the second color pose."""
    entries = scene.calibration()
    assert [e.transmitter_id for e in entries] == [1, 2]
    poses = compose_calibration(entries, scene.cameras[0].color_pose)
    assert np.allclose(
        poses[2].as_matrix(), scene.cameras[1].color_pose.as_matrix()
    )


def test_noise_is_seeded() -> None:
    """Test depth noise depends on the seed only."""
    a = SyntheticScene(SceneConfig(frame_count=1, noise_mm=5.0, seed=1))
    b = SyntheticScene(SceneConfig(frame_count=1, noise_mm=5.0, seed=1))
    clean = SyntheticScene(SceneConfig(frame_count=1))
    assert a.render(0, 0).depth == b.render(0, 0).depth
    assert a.render(0, 0).depth != clean.render(0, 0).depth


def test_gen_scene_streams(scene: SyntheticScene) -> None:
    """Test one lazy stream per camera."""
    streams = gen_scene(SceneConfig(cameras=2, frame_count=2))
    assert sorted(streams) == [1, 2]
    frames = list(streams[2])
    assert [f.frame_id for f in frames] == [0, 1]
    assert frames[1].timestamp_micros == 33_333
    assert frames[0].depth == scene.render(1, 0).depth


def test_save_and_load_frame(tmp_path: Path, scene: SyntheticScene) -> None:
    """Test frames survive a trip through a file."""
    frame = scene.render(1, 2)
    path = tmp_path / "frame.npz"
    save_frame(frame, path)
    loaded = load_frame(path)
    assert loaded.frame_id == 2
    assert loaded.timestamp_micros == frame.timestamp_micros
    assert loaded.depth == frame.depth
    assert loaded.color == frame.color
    assert loaded.depth_intrinsics == frame.depth_intrinsics
    assert loaded.color_intrinsics == frame.color_intrinsics
    assert loaded.depth_to_color == frame.depth_to_color


def test_load_frame_missing(tmp_path: Path) -> None:
    """Test an absent frame file."""
    with pytest.raises(IoFailureError):
        load_frame(tmp_path / "nothing.npz")


def test_write_scene(tmp_path: Path) -> None:
    """Test the directory layout written for two cameras."""
    config = SceneConfig(cameras=2, frame_count=2)
    dirs = write_scene(config, tmp_path)
    assert [d.name for d in dirs] == ["camera1", "camera2"]
    source = FileFrameSource(dirs[1])
    assert len(source) == 2
    assert [f.frame_id for f in source] == [0, 1]
    entries = read_calibration(tmp_path / "calibration.txt")
    assert entries == SyntheticScene(config).calibration()


def test_file_frame_source_needs_frames(tmp_path: Path) -> None:
    """Test an empty directory."""
    with pytest.raises(IoFailureError):
        FileFrameSource(tmp_path)


def test_scene_config_validation() -> None:
    """Test preset, camera and frame checks."""
    with pytest.raises(ConfigError):
        SceneConfig(preset="huge")
    with pytest.raises(ConfigError):
        SceneConfig(cameras=3)
    with pytest.raises(ConfigError):
        SceneConfig(frame_count=0)
    with pytest.raises(ConfigError):
        SceneConfig(noise_mm=-1.0)
