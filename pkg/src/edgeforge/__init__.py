"""edgeforge: edge-feature dataset construction and incremental linear-classifier benchmarking."""

__version__ = "0.1.0"
