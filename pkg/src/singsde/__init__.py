"""Singular-drift SDE simulation and verification toolkit."""
