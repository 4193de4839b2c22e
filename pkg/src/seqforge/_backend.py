"""Kernel backend selection.

The compiled extension is used when it imports; ``SEQFORGE_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

_requested = os.environ.get("SEQFORGE_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"SEQFORGE_BACKEND must be 'python' or 'compiled', got {_requested!r}")
if _requested == "compiled" and _compiled is None:
    raise ImportError("SEQFORGE_BACKEND=compiled but the extension is not built")

NAME = _requested or ("compiled" if _compiled is not None else "python")
kernels = BACKENDS[NAME]


def use(name: str):
    """Switch the active backend at runtime (tests and benchmarks)."""
    global NAME, kernels
    kernels = BACKENDS[name]
    NAME = name
    return kernels


def get():
    return kernels
