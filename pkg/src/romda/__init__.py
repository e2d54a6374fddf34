"""Parametric probabilistic reduced-order model with ensemble Kalman adaptation."""

__version__ = "0.1.0"
