"""Embedding export tool for the knowledge-tracing pipeline."""

__version__ = "0.1.0"
