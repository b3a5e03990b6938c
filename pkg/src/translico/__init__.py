"""Desk-scale transliteration contrastive modeling."""

__version__ = "0.1.0"
