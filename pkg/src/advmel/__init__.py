"""Adversarial robustness toolkit for embedding-based multimodal entity linking."""

__version__ = "0.1.0"
