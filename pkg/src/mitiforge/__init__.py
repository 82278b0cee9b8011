"""Mitigate upstream library vulnerabilities inside downstream source code."""

__version__ = "0.1.0"
