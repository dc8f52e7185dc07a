"""Kernel backend selection.

The hot blending loops exist twice: numba-jitted kernels and a pure-numpy
fallback. The active backend is chosen once per process:

  SPLATEDIT_BACKEND=numba   force numba (ImportError if unavailable)
  SPLATEDIT_BACKEND=numpy   force the numpy fallback
  unset                     numba when importable, else numpy

`render(..., backend=...)` can still override per call; see benchmarks/.
"""
from __future__ import annotations

import os

_VALID = ("numba", "numpy")


def _probe_numba() -> bool:
    try:
        import numba  # noqa: F401
        return True
    except ImportError:
        return False


def default_backend() -> str:
    env = os.environ.get("SPLATEDIT_BACKEND", "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(f"SPLATEDIT_BACKEND must be one of {_VALID}, got {env!r}")
        if env == "numba" and not _probe_numba():
            raise ImportError("SPLATEDIT_BACKEND=numba but numba is not importable")
        return env
    return "numba" if _probe_numba() else "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {backend!r}")
    return backend
