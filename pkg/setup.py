"""Build script: compiles the optional carry-less multiply extension.

The extension is x86-only and is skipped (with a warning) wherever it cannot
be built; the package falls back to the pure NumPy kernel in that case.
"""

import platform
import sys

from setuptools import setup

ext_modules = []
if platform.machine() in ("x86_64", "AMD64"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "hetqrng._gf2x",
            ["src/hetqrng/_gf2x.pyx"],
            include_dirs=[np.get_include(), "src/hetqrng"],
            extra_compile_args=["-O3", "-mpclmul", "-msse4.1"],
        )
        ext_modules = cythonize([ext], language_level=3)
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"warning: skipping compiled GF(2) kernel ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
