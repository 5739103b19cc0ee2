"""Ledger forensics for DPoS blockchains: replay, metrics, and gang detection."""

__version__ = "0.1.0"
