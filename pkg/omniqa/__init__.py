"""Viewport-oriented graph convolution for blind omnidirectional image quality assessment."""

__version__ = '0.1.0'
