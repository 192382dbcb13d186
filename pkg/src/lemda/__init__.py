"""Learned feature-space augmentation for late-fusion multimodal classifiers."""

__version__ = "0.1.0"
