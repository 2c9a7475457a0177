"""Seasonal call-volume forecasting: mixed models, classical smoothers and from-scratch networks."""

__version__ = "0.1.0"
