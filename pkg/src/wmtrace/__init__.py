"""Watermark embedding, extraction and statistical tracing toolkit."""

__version__ = "0.1.0"
