"""Spin-echo rephasing of single-excitation spin waves in a cold atomic ensemble."""

__version__ = "0.1.0"
