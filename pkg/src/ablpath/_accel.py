"""Numba toggle.

Set ``ABLPATH_NO_NUMBA=1`` to run every kernel through its pure Python/numpy
path. The flag is read once at import time.
"""
import os

_DISABLED = os.environ.get("ABLPATH_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and not _DISABLED


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, identity otherwise."""
    if USE_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
