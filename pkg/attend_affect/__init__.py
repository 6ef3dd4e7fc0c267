"""Multimodal valence prediction for narrative video clips."""

__version__ = "0.1.0"
