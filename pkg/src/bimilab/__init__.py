"""Noise-robust auxiliary rewards for instruction-guided RL, at desk scale."""

from __future__ import annotations

__version__ = "0.1.0"
