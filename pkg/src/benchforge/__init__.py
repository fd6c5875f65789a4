"""Toolkit for building, auditing, and evaluating intruder-sentence benchmarks."""

__version__ = "0.1.0"
