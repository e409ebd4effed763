"""Orchard/vineyard frost monitoring over a contract-governed data space."""

__version__ = "0.1.0"
