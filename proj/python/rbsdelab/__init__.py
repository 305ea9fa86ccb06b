"""Reflected BSDEs, Dynkin games and obstacle problems on finite trees."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, SolverError  # noqa: F401
