"""Loss-sorted dynamic batch training for segmentation models."""

__version__ = "0.1.0"
