"""Backend selection for the elementwise hot kernels.

Prefers the compiled Cython module; falls back to pure numpy when the
extension is absent or when ``GEOHNN_PURE_PYTHON=1`` is set.
"""
import os

from . import kernels_py

if os.environ.get("GEOHNN_PURE_PYTHON") == "1":
    kernels = kernels_py
else:
    try:
        from . import _kernels_c as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = kernels_py

BACKEND_NAME = kernels.NAME
