"""Immediate-causality networks between market indices from windowed transfer entropy."""

__version__ = "0.1.0"
