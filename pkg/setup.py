"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import); building it just makes the spatial kernels faster.
Build in place with:

    python3 setup.py build_ext --inplace
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "hyperfake.kernels._spatial",
                ["src/hyperfake/kernels/_spatial.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError as exc:  # Cython or numpy missing at build time
    warnings.warn(f"compiled kernels skipped ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)
