"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``BLOCHFX_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("BLOCHFX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

cn_cyclic = _impl.cn_cyclic
pn_contract = _impl.pn_contract
cn_sparse = _kernels_py.cn_sparse
cyclic_tridiagonal = _kernels_py.cyclic_tridiagonal
