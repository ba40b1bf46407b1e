"""Pick the Sinkhorn kernel at import time.

The compiled kernel is used when it was built; set ``PSCO_PURE_PYTHON=1`` to
force the numpy fallback.
"""
import os

from . import _sinkhorn_py

BACKEND = "python"
sinkhorn_log = _sinkhorn_py.sinkhorn_log

if not os.environ.get("PSCO_PURE_PYTHON"):
    try:
        from . import _sinkhorn_ext
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        sinkhorn_log = _sinkhorn_ext.sinkhorn_log


def get_kernel(name=None):
    """Return the kernel named ``"python"`` or ``"cython"`` (default: the active one)."""
    if name is None:
        return sinkhorn_log
    if name == "python":
        return _sinkhorn_py.sinkhorn_log
    if name == "cython":
        from . import _sinkhorn_ext

        return _sinkhorn_ext.sinkhorn_log
    raise ValueError(f"unknown kernel {name!r}")
