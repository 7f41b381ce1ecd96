"""Build script for the compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), but the compiled kernels are built by default.
"""

import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "robust_pll._kernels._evidential",
        ["src/robust_pll/_kernels/_evidential.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
