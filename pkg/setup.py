"""Builds the optional compiled similarity kernel.

The package works without it; mmorient.cmrl falls back to the numpy path
when the extension is absent.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    np = None
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "mmorient._simkernel",
        sources=["src/mmorient/_simkernel.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
