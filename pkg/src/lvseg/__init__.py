"""Sparse-annotation echocardiogram video segmentation toolkit."""

__version__ = "0.1.0"
