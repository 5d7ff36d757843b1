"""Select the compiled kernels when available, else the pure-Python twin.

Set ``RELHAWKES_PURE_PYTHON=1`` to force the fallback at import time, or call
``set_backend`` afterwards. Callers look up ``kernels`` on this module at call
time, so a switch takes effect immediately.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

AVAILABLE = ("cython", "python") if _ckernels is not None else ("python",)


def set_backend(name: str) -> str:
    """Switch to ``"cython"`` or ``"python"``; returns the previous name."""
    global kernels, BACKEND
    if name not in AVAILABLE:
        raise ValueError(f"backend {name!r} not available (have {AVAILABLE})")
    prev = globals().get("BACKEND")
    kernels = _ckernels if name == "cython" else _pykernels
    BACKEND = name
    return prev


if os.environ.get("RELHAWKES_PURE_PYTHON", "") not in ("", "0"):
    set_backend("python")
else:
    set_backend(AVAILABLE[0])

__all__ = ["kernels", "BACKEND", "AVAILABLE", "set_backend"]
