import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# FLHC_PURE_PYTHON=1 skips the compiled kernels entirely; the package then
# runs on the numpy fallback selected at import time.
if cythonize is None or os.environ.get("FLHC_PURE_PYTHON") == "1":
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "flhc.kernels._fastops",
                ["src/flhc/kernels/_fastops.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
