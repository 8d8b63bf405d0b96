import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are an optional speedup: the package falls back to
# numpy implementations when the extension is absent (see pabridge._backend).
# Set PABRIDGE_SKIP_EXT=1 to install without a C compiler.
ext_modules = []
if os.environ.get("PABRIDGE_SKIP_EXT", "0") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "pabridge._rqkernels",
                    ["src/pabridge/_rqkernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
