"""Moment and tail-probability bounds for the runtime of randomized programs."""
from __future__ import annotations

__version__ = "0.1.0"
