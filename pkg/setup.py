import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MSREG_SKIP_EXT") != "1":
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "msreg.kernels._neighbor",
                ["src/msreg/kernels/_neighbor.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
