"""Reward recovery in two-player general-sum stochastic games.

A library plus experiment CLI that (i) learns equilibrium bi-policies for
five solution concepts by multi-agent Q-learning, (ii) recovers both
players' reward vectors from an observed bi-policy under the matching
equilibrium assumption, and (iii) validates recovery on grid-world
benchmarks and an abstract soccer game.
"""

__version__ = "0.1.0"
