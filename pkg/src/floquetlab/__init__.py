"""Numerical laboratory for Floquet-Bloch spectra of periodic pseudo-differential operators."""

__version__ = "0.1.0"
