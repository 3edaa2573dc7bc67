"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time), so the build must not fail when Cython or a C compiler is
missing.
"""

import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

PYX = os.path.join("src", "entexpand", "kernels", "_core.pyx")

if cythonize is not None and os.path.exists(PYX):
    extensions = cythonize(
        [
            Extension(
                "entexpand.kernels._core",
                [PYX],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
else:
    extensions = []

setup(ext_modules=extensions)
