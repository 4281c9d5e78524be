"""Kernel backend selection: compiled Cython core with a NumPy fallback.

The choice is made once at import.  ``D2A2_BACKEND`` overrides it:
``auto`` (default) prefers the compiled module, ``compiled`` requires it,
``numpy`` forces the fallback.  ``set_backend`` swaps at runtime (used by
the parity tests and the kernel benchmark).

The interpolation scatter/gather kernels are where compilation pays off
(4-5x over the vectorized NumPy fallback, see benchmarks/bench_kernels.py);
the im2col/col2im pair is memory-bound and roughly at parity.
"""

import os

from . import _kernels_np

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_active = None
_active_name = None


def available_backends():
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name):
    global _active, _active_name
    if name == "auto":
        name = "compiled" if _compiled is not None else "numpy"
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available; build the "
                               "extension or use D2A2_BACKEND=numpy")
        _active = _compiled
    elif name == "numpy":
        _active = _kernels_np
    else:
        raise ValueError(f"unknown backend '{name}' (auto|compiled|numpy)")
    _active_name = name
    return _active_name


def backend_name():
    return _active_name


def kernels():
    return _active


set_backend(os.environ.get("D2A2_BACKEND", "auto"))
