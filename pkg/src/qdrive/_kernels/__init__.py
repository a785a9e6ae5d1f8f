"""Propagation kernels.

The compiled extension ``_propagate`` is used when it is importable; the
numpy implementation in ``_reference`` is the fallback. Set
``QDRIVE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _reference

STATUS_OK = _reference.STATUS_OK
STATUS_MAX_STEPS = _reference.STATUS_MAX_STEPS
STATUS_UNDERFLOW = _reference.STATUS_UNDERFLOW

_compiled = None
if os.environ.get("QDRIVE_PURE_PYTHON", "") != "1":
    try:
        from . import _propagate as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def available_backends():
    return ("cython", "python") if _compiled is not None else ("python",)


def get_propagate(backend=None):
    """Return the kernel function for ``backend`` (``None`` selects the default)."""
    backend = backend or BACKEND
    if backend == "python":
        return _reference.propagate
    if backend == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel not built; reinstall with Cython available")
        return _compiled.propagate
    raise ValueError(f"unknown backend {backend!r}")
