"""Command handlers for the potgame CLI."""
