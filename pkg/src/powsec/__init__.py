"""Proof-of-work security simulator and closed-form attack bounds."""

__version__ = "0.1.0"
