"""Scanline inpainting for satellite rasters with convolutional neural processes."""

__version__ = "0.1.0"
