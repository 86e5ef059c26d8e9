"""Cascade simulation and verification toolkit."""

from ._rost import *  # noqa: F401,F403
from ._rost import __version__  # noqa: F401
