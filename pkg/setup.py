"""Build the optional Cython kernels.

The extension is optional: if Cython or a C compiler is missing the package
installs without it and runs on the pure-Python kernels.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("VIGILANCE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "vigilance._ckernels",
                    ["src/vigilance/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
