"""Surrogate-modeling toolkit for unconfined groundwater flow."""

__version__ = "0.1.0"
