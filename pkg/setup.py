import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension("dars._kernels", ["src/dars/_kernels.pyx"], include_dirs=[numpy.get_include()]),
]

setup(ext_modules=cythonize(extensions, language_level="3"))
