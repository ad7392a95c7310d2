"""Path-based recommendation with neural relation modules over typed knowledge graphs."""

__version__ = "0.1.0"
