"""Desk-scale numerics for three-body mean-field dynamics of bosons."""

__version__ = "0.1.0"
