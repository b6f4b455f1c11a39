"""Steady-state simulation and fitting of stimulated Raman spectra of single molecules."""

__version__ = "0.1.0"
