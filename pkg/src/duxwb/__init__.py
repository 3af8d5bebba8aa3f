"""Dual-exposure illuminant estimation toolkit.

Submodules are imported lazily by callers (``from duxwb import core`` etc.) so
that the CLI can configure thread limits before numpy is loaded.
"""

__version__ = "0.1.0"
