"""Identify the RGB-family color space (Adobe, Apple, ColorMatch, ProPhoto, sRGB) of an image
from two-level EM pixel-embedding features."""

__version__ = "0.1.0"
