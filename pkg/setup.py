from setuptools import Extension, setup

# The enumeration kernel is optional: pmpatch falls back to the pure-Python
# twin in pmpatch/_enumpy.py when the extension is absent or Cython is not
# installed at build time.
try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "pmpatch._enumcore",
                ["src/pmpatch/_enumcore.pyx"],
                language="c++",
                extra_compile_args=["-O2"],
            )
        ],
        language_level=3,
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
