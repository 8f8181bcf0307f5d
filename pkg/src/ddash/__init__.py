"""Distributed data sharing node: content-addressed store, record ledger, peer network."""

__version__ = "0.1.0"
