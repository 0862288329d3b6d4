"""Desk-scale data-free model stealing with diversity-driven query generation."""

__version__ = "0.1.0"
