"""Builds the optional compiled kernel core.

Set HYPER_SIM_SKIP_EXT=1 to install without the extension; the package then
falls back to the pure-Python kernels at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("HYPER_SIM_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "hyper_sim.kernels._core",
                    ["src/hyper_sim/kernels/_core.pyx"],
                    # -ffp-contract=off keeps float results bit-identical to
                    # the pure-Python kernels (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
