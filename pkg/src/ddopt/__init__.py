"""Data-driven linear optimization under uncertainty: build, solve, evaluate."""

__version__ = "0.1.0"
