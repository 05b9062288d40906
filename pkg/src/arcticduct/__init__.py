"""Dual-duct sound speed inversion from modal dispersion of broadband pulses."""

__version__ = "0.1.0"
