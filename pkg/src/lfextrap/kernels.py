"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy twins
are used. Set ``LFEXTRAP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

CLAMP = _kernels_py.CLAMP
ZERO = _kernels_py.ZERO

_backend = _kernels_py
BACKEND = "python"

if os.environ.get("LFEXTRAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _backend  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _backend = _kernels_py

shift_x = _backend.shift_x
shift_x_adjoint = _backend.shift_x_adjoint
im2col3d = _backend.im2col3d
col2im3d = _backend.col2im3d
shift2d_accumulate = _backend.shift2d_accumulate


def boundary_code(name):
    """Map a boundary rule name (``"clamp"`` / ``"zero"``) to its kernel code."""
    try:
        return {"clamp": CLAMP, "zero": ZERO}[name]
    except KeyError:
        raise ValueError(f"unknown boundary rule {name!r}") from None
