"""Hot loops behind the tensor ops.

The compiled extension is used when it imports; otherwise the numpy
fallback is. ``BIOSCATTER_KERNELS=python`` forces the fallback and
``BIOSCATTER_KERNELS=cython`` makes a missing extension an import error.
"""
import os

from . import _py

_choice = os.environ.get("BIOSCATTER_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "python"):
    raise ImportError(f"BIOSCATTER_KERNELS must be auto, cython or python, not {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "cython":
            raise

BACKENDS = {"python": _py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_active = BACKENDS[BACKEND]


def use(name):
    """Switch the active backend at runtime (used by tests and the benchmark)."""
    global BACKEND, _active
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}")
    BACKEND, _active = name, BACKENDS[name]


def im2col(x, kh, kw):
    return _active.im2col(x, kh, kw)


def col2im(cols, c, h, w, kh, kw):
    return _active.col2im(cols, c, h, w, kh, kw)


def maxpool2_forward(x):
    return _active.maxpool2_forward(x)


def maxpool2_backward(grad, idx):
    return _active.maxpool2_backward(grad, idx)
