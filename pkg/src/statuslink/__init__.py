"""Predictive ("parallel") status update for networked platoon control."""
from __future__ import annotations

__version__ = "0.1.0"
