"""Init file for the rgbd_relay package."""

from importlib.metadata import PackageNotFoundError, version


try:
    __version__ = version("rgbd-relay")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"
