"""Testbed for evaluating tool-using language-model agents on API benchmarks."""

__version__ = "0.1.0"
