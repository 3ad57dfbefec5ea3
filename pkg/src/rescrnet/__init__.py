"""Res-CR-Net: a fully convolutional residual segmentation network on numpy."""

__version__ = "0.1.0"
