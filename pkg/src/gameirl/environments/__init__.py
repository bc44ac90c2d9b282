"""Benchmark environments: two grid games and an abstract soccer game."""

from .base import CompiledEnvironment
from .grid import GridGameSpec, gg1_spec, gg2_spec
from .soccer import SoccerSpec, soccer_spec

__all__ = [
    "CompiledEnvironment",
    "GridGameSpec",
    "SoccerSpec",
    "gg1_spec",
    "gg2_spec",
    "soccer_spec",
]
