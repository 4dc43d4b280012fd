"""Build script for the optional compiled grid kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so the extension is marked optional: a missing
compiler degrades the install instead of failing it.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "crossplan._kernels._gridcore",
                ["src/crossplan/_kernels/_gridcore.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
