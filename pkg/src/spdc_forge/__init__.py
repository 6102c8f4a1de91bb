"""Spectral-purity engineering for domain-engineered SPDC photon-pair sources."""

__version__ = "0.1.0"
