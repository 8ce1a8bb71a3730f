import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

# Build the compiled kernels in place for development with:
#   python setup.py build_ext --inplace
# The package falls back to the pure-Python kernels when the extension
# is missing, so a plain source checkout still imports.

setup(
    ext_modules=cythonize(
        [
            Extension(
                "dynrep.numerics._ckernels",
                ["src/dynrep/numerics/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                # contraction off: fused multiply-adds would round differently
                # from the pure-Python kernels and break bit parity
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
