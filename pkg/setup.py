"""Build the optional compiled kernels; the package falls back to numpy if this fails."""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("REREC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "rerec._ckernels",
                    ["src/rerec/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover
        print(f"compiled kernels disabled: {exc}", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
