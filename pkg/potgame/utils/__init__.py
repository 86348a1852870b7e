"""Utility modules for potgame."""
