"""Inverse estimation of perovskite solar-cell layer thicknesses from EQE spectra."""

__version__ = "0.1.0"
