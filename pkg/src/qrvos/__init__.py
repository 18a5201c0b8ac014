"""Referring video object segmentation with language-conditioned queries."""

__version__ = "0.1.0"
