"""Word metrics, projections, pivots and random walks on finitely generated groups."""
from __future__ import annotations

__version__ = "0.1.0"
