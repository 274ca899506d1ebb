"""lithocnn: CPU CNN engine and core-photo rock-typing pipeline."""

__version__ = "0.1.0"
