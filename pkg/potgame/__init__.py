"""
potgame: Weighted Constrained Potential Dynamic Games

Certifies multi-agent constrained dynamic games as weighted potential games,
assembles the potential function and computes open-loop generalized Nash
equilibria by solving one constrained optimal control problem.
"""

__version__ = "1.0.1"
__author__ = "potgame developers"
