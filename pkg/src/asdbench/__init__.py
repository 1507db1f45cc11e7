"""Desk-scale benchmark toolkit for unsupervised anomalous sound detection under domain shift."""

__version__ = "0.1.0"
