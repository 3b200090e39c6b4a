"""Sidecar process implementing the promptable-segmenter line protocol."""

__version__ = "0.1.0"
