"""Online multi-modal person search over streams of instance features."""

__version__ = "0.1.0"
