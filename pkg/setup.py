import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LMV_RPA_PURE") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("lmv_rpa._kernels", ["src/lmv_rpa/_kernels.pyx"], extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
