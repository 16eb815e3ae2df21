"""Branching random walk laboratory."""
