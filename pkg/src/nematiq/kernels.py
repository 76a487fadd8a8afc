"""Pointwise kernel selection: compiled extension when importable, numpy otherwise.

Set ``NEMATIQ_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("NEMATIQ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

cross = _impl.cross
poly_f = _impl.poly_f
poly_eval = _impl.poly_eval
advect = _impl.advect
