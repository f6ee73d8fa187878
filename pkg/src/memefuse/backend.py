"""Kernel backend selection.

The env var MEMEFUSE_BACKEND picks the implementation of the hot kernels:

  * ``numba``  -- compiled kernels (kernels_numba)
  * ``numpy``  -- pure NumPy fallback (kernels_numpy)
  * ``auto``   -- numba when importable, else numpy (default)

``set_backend`` overrides the env var for the current process; the benchmark
and the parity tests use it to compare both paths.
"""

import os

from . import kernels_numpy

_FORCED = None
_ACTIVE = None

KERNEL_NAMES = (
    "layer_norm_forward",
    "layer_norm_backward",
    "masked_softmax",
    "softmax_grad",
    "masked_softmax_xent",
    "adam_update",
    "embedding_grad",
)


def _numba_module():
    from . import kernels_numba

    return kernels_numba


def _resolve(name):
    if name == "numpy":
        return kernels_numpy
    if name == "numba":
        return _numba_module()
    if name == "auto":
        try:
            return _numba_module()
        except ImportError:
            return kernels_numpy
    raise ValueError(f"unknown backend {name!r} (expected numba, numpy or auto)")


def set_backend(name):
    """Force a backend for this process ('numba', 'numpy' or None to reset)."""
    global _FORCED, _ACTIVE
    _FORCED = name
    _ACTIVE = None


def active():
    """Return the active kernel module."""
    global _ACTIVE
    if _ACTIVE is None:
        name = _FORCED or os.environ.get("MEMEFUSE_BACKEND", "auto")
        _ACTIVE = _resolve(name)
    return _ACTIVE


def backend_name():
    return "numba" if active().__name__.endswith("numba") else "numpy"
