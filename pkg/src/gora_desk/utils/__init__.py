"""Utility modules for gora-desk.

Modules:
- summarizer: compact descriptors for arrays and long sequences in log payloads
"""
