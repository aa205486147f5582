"""Texture fingerprints from the SVD of CNN feature maps."""

__version__ = "0.1.0"
