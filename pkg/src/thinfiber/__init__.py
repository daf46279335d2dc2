"""Numerical toolkit for wave problems on thin fiber networks and their limiting metric graphs."""
from __future__ import annotations

__version__ = "0.1.0"
