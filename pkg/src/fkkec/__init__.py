"""Factorized Kramers-Kronig phase retrieval and error correction for CARS cubes."""

__version__ = "0.1.0"
