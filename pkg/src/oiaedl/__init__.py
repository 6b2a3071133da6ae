"""Evidential object-induced action/explanation model with uncertainty-guided training."""

__version__ = "0.1.0"
