"""Reliability-aware body/hand skeleton action recognition at desk scale."""

__version__ = "0.1.0"
