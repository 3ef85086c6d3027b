"""Python bindings for the anchor-based lane detector core."""

from laneatt._core import *  # noqa: F401,F403
