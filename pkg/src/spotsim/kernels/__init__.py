"""Hot loops of the simulator, with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly. Set
``SPOTSIM_BACKEND=numpy`` to force the fallback (both produce identical
results; the test suite checks this).
"""
import importlib
import os

from . import _numpy

BACKEND = os.environ.get("SPOTSIM_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"SPOTSIM_BACKEND must be 'numba' or 'numpy', not {BACKEND!r}")


def _load_numba():
    try:
        return importlib.import_module(f"{__name__}._numba")
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return None


_impl = _load_numba() if BACKEND == "numba" else None
if _impl is None:
    BACKEND = "numpy"
    _impl = _numpy

assemble_patches = _impl.assemble_patches
os_gemm = _impl.os_gemm

NEW, NEIGHBOR, RESERVED, PAD = _numpy.NEW, _numpy.NEIGHBOR, _numpy.RESERVED, _numpy.PAD


def implementations():
    """Mapping backend name -> module, for tests and benchmarks."""
    impls = {"numpy": _numpy}
    nb = _load_numba()
    if nb is not None:
        impls["numba"] = nb
    return impls
