import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - the pure-Python kernels still work
    cythonize = None


def _extensions():
    if cythonize is None or os.environ.get("LAPLACECERT_NO_EXT"):
        return []
    extensions = [
        Extension(
            "laplacecert._kernels._ckernels",
            ["src/laplacecert/_kernels/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        )
    ]
    return cythonize(extensions, compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
