"""Kernel backend selection.

The compiled extension is preferred when available; the pure-numpy fallback
is always present. Set ODEVENT_BACKEND=python to force the fallback.
"""

import os

from . import _mlp_py

IDENTITY = _mlp_py.IDENTITY
TANH = _mlp_py.TANH
RELU = _mlp_py.RELU
SINE = _mlp_py.SINE
SOFTMAX = _mlp_py.SOFTMAX

_forced = os.environ.get("ODEVENT_BACKEND", "").lower()

if _forced in ("", "cython", "compiled"):
    try:
        from . import _mlp_cy as _impl
    except ImportError:
        if _forced:
            raise
        _impl = _mlp_py
else:
    _impl = _mlp_py

mlp_forward = _impl.mlp_forward
mlp_vjp = _impl.mlp_vjp


def active_backend() -> str:
    """Name of the kernel implementation in use: 'cython' or 'python'."""
    return _impl.BACKEND_NAME


def python_backend():
    """The pure-numpy kernel module (for benchmarking and parity tests)."""
    return _mlp_py


def compiled_backend():
    """The compiled kernel module, or None if it is not built."""
    try:
        from . import _mlp_cy

        return _mlp_cy
    except ImportError:
        return None
