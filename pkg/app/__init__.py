"""Geometry self-attention lab: priors, attention, a toy pyramid segmenter and its CLI."""

__version__ = "0.1.0"
