"""Interpretable convolutional rectifier classifiers for time series."""

__version__ = "0.1.0"
