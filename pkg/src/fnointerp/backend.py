"""Kernel backend selection: compiled extension if available, numpy otherwise.

``KERNELS`` exposes ``gelu_fwd``, ``gelu_bwd`` (flat float64 arrays) and
``adamw_update`` (in-place on flat float64 arrays). Call ``use_backend`` to
force one side, e.g. when benchmarking the two implementations against each
other.
"""

from . import _kernels_np

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

KERNELS = _compiled if _compiled is not None else _kernels_np
BACKEND_NAME = "compiled" if _compiled is not None else "numpy"


def available_backends():
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def use_backend(name):
    """Switch the active kernel backend ('compiled' or 'numpy')."""
    global KERNELS, BACKEND_NAME
    if name == "numpy":
        KERNELS, BACKEND_NAME = _kernels_np, "numpy"
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel extension is not available")
        KERNELS, BACKEND_NAME = _compiled, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return BACKEND_NAME
