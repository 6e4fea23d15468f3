"""Backend selection for the per-step kernels.

The environment variable LSALAB_BACKEND chooses the implementation:

- ``auto`` (default): jit-compiled kernels when numba imports, else the
  pure-numpy fallback;
- ``numba``: require the jit backend, fail if numba is unavailable;
- ``numpy``: force the fallback.

Both backends walk identical state paths for a given generator; see
``python -m lsalab.bench`` for a speed comparison.
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import numba_backend

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_backend = None  # type: ignore[assignment]
    _HAS_NUMBA = False


def select_backend(name: str | None = None):
    """Return the kernel module for ``name`` (or the environment choice)."""
    if name is None:
        name = os.environ.get("LSALAB_BACKEND", "auto").lower() or "auto"
    if name == "auto":
        return numba_backend if _HAS_NUMBA else numpy_backend
    if name == "numba":
        if not _HAS_NUMBA:
            raise ImportError("LSALAB_BACKEND=numba but numba is not importable")
        return numba_backend
    if name == "numpy":
        return numpy_backend
    raise ValueError(f"unknown kernel backend {name!r}; use auto, numba, or numpy")


active = select_backend()


def active_backend_name() -> str:
    return "numba" if (_HAS_NUMBA and active is numba_backend) else "numpy"
