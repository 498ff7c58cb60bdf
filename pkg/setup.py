import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "synfix.net._ckernels",
        sources=["src/synfix/net/_ckernels.pyx"],
        extra_compile_args=["-O3", "-march=native", "-ffast-math"],
        extra_link_args=["-lmvec", "-lm"],
        include_dirs=[numpy.get_include()],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
