"""Block-sparse tensor trains for homogeneous polynomial regression."""

__version__ = "0.1.0"
