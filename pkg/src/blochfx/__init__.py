"""Effective Hamiltonians for magnetic Bloch bands with slowly varying fields."""

import os as _os

__version__ = "0.1.0"

# BLOCHFX_THREADS caps BLAS/OpenMP pools; it must be read before numpy loads
if _os.environ.get("BLOCHFX_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["BLOCHFX_THREADS"])

from .config import ModelSpec, load_spec, load_spec_file, landau_spec, mathieu_spec  # noqa: E402
from .errors import BlochError, InputError, NumericalError  # noqa: E402

__all__ = [
    "BlochError",
    "InputError",
    "ModelSpec",
    "NumericalError",
    "__version__",
    "landau_spec",
    "load_spec",
    "load_spec_file",
    "mathieu_spec",
]
