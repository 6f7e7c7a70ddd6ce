"""Planar quasi-static contact manipulation with compliant tactile grippers."""

__version__ = "0.1.0"
