"""Kernel backend selection.

The compiled Cython extension is preferred; the NumPy fallback is used when
it is missing or when ANOVATREES_KERNELS=python is set. Both produce
bit-identical output, so chains are reproducible across backends.
"""

import os

from . import _py

_choice = os.environ.get("ANOVATREES_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _py
    BACKEND = "python"
elif _choice in ("auto", "cython"):
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = _py
        BACKEND = "python"
else:
    raise ValueError(f"ANOVATREES_KERNELS must be auto|cython|python, got {_choice!r}")

row_cells = _impl.row_cells
row_mults = _impl.row_mults
