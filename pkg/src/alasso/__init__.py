"""Adaptive-lasso estimation and finite-sample inference for time-series
regressions, with a Monte Carlo engine for coverage and power studies."""

__version__ = "0.1.0"
