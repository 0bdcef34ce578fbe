"""Noncoherent compressive mmWave beam alignment: simulation, baselines and a learned classifier."""

__version__ = "0.1.0"
