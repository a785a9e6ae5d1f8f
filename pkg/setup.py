import os

import numpy as np
from setuptools import Extension, setup

# The pure-Python propagator is always available; the compiled kernel is optional.
ext_modules = []
if os.environ.get("QDRIVE_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "qdrive._kernels._propagate",
                    ["src/qdrive/_kernels/_propagate.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
