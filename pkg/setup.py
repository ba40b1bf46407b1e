"""Build the optional Cython kernels.

The package works without them: ``psco._backend`` falls back to the numpy
implementation when the extension cannot be imported.
"""
import os
import sys

from setuptools import setup

# Finite-math flags let GCC call the vectorized libmvec exp; they are
# compile-only, so crtfastmath (global flush-to-zero) is never linked.
EXTRA_COMPILE_ARGS = os.environ.get(
    "PSCO_CFLAGS",
    "-O3 -march=native -fno-math-errno -funsafe-math-optimizations -ffinite-math-only",
).split()

# glibc's vector math library provides the SIMD exp variants
LIBRARIES = ["mvec", "m"] if sys.platform.startswith("linux") else []

ext_modules = []
if not os.environ.get("PSCO_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "psco._sinkhorn_ext",
                    ["src/psco/_sinkhorn_ext.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=EXTRA_COMPILE_ARGS,
                    libraries=LIBRARIES,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
