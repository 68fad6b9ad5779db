"""Simulation and analysis toolkit for a spin-photon interface of the lead-vacancy center in diamond."""

__version__ = "0.1.0"
