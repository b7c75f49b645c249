"""
Internal backends package: interchangeable record stores.

Only `discover_records` is considered part of the importable surface here.
Stores themselves are loaded by adapters in `r2sl.api` as needed.
"""

from __future__ import annotations

from .discovery import discover_records  # re-export for internal use

__all__ = ["discover_records"]
