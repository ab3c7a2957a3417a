"""Builds the optional compiled kernels; the package falls back to numpy without them."""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: pure-Python install
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "xmodal_kd._kernels",
                ["src/xmodal_kd/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: keeps p - lr*g identical to the numpy path
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
