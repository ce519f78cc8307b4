import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: the compiled kernels must round every multiply and add
# separately, exactly like the pure-python backend, so both backends produce
# bit-identical convolution results. FMA contraction would break that.
ext = Extension(
    "rnem._ckernels",
    ["src/rnem/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=[
        "-O3",
        "-march=native",
        "-mprefer-vector-width=512",
        "-ffp-contract=off",
        "-fopenmp",
    ],
    extra_link_args=["-fopenmp"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
