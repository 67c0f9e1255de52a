"""Kahler-Ricci flow on the P^1-bundles M_{n,k} under Calabi symmetry."""

__version__ = "0.1.0"
