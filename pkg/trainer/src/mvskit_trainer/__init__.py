"""Confidence-network trainer for the mvskit MVS toolkit."""

__version__ = "0.1.0"

from .model import ConfidenceNet, NetworkSpec, build_model  # noqa: F401
