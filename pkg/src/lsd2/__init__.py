"""Short/long exposure pair synthesis, joint denoise/deblur training and evaluation."""

__version__ = "0.1.0"
