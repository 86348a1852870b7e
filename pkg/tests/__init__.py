"""Tests for potgame."""
