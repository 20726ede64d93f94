"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled module is used when it imports; set ``HFLASSIGN_KERNELS=python``
to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HFLASSIGN_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

theta_numerator = _impl.theta_numerator
enumerate_best = _impl.enumerate_best
simplex_iterate = _impl.simplex_iterate

OPTIMAL = _pykernels.OPTIMAL
UNBOUNDED = _pykernels.UNBOUNDED
ITERATION_LIMIT = _pykernels.ITERATION_LIMIT


def backends():
    """Map of backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
