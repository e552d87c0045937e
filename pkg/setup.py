"""Builds the optional compiled kernels; the package works without them."""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CRBM_NO_EXT", "") == "":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "crbm.kernels._ckernels",
                    ["src/crbm/kernels/_ckernels.pyx"],
                    # no fused multiply-add, so results match the numpy fallback bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
