"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure numpy/python fallback is
selected at import time); set SPECTUBE_NO_EXT=1 to skip compilation.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPECTUBE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "spectube._kernels._core",
                    ["src/spectube/_kernels/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
