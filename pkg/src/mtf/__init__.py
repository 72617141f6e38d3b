"""Symbolic-music tokenization toolkit.

MIDI parsing, grid quantization, four time/duration token schemes, BPE,
token syntax checking, corpus statistics and embedding-space metrics.
"""

from __future__ import annotations

__version__ = "0.1.0"
