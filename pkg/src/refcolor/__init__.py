"""Exemplar-based colorization with learned per-cluster superpixel matching weights."""

__version__ = "0.1.0"
