"""Barrier-certificate verification for POMDPs with interval uncertainty."""

__version__ = "0.1.0"
