from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "sealtw._ckernels",
                ["src/sealtw/_ckernels.pyx"],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
