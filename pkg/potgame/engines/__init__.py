"""Numerical engines for potgame."""
