"""Hierarchical-graph knowledge tracing pipeline."""

__version__ = "0.1.0"
