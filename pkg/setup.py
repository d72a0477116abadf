import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("PERCIMDP_NO_EXTENSION", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        print("Cython or numpy missing: installing the pure Python fallback only", file=sys.stderr)
    else:
        ext = Extension(
            "percimdp._kernels",
            ["src/percimdp/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # no fused multiply-add, so results match the numpy fallback bit for bit
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
