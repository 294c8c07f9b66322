"""Build script: compiles the optional fused-kernel extension.

The package works without the extension (pure-numpy fallback selected at
import time), so a failed Cython build is downgraded to a warning.
"""
import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "geohnn._backend._kernels_c",
                ["src/geohnn/_backend/_kernels_c.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover
    print(f"warning: compiled kernels unavailable, using pure-python backend ({exc})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
