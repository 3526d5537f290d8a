"""Shared, customs-validated custody ledger for shipping containers."""

__version__ = "0.1.0"
