"""Build hook for the optional compiled kernel.

The package works without the extension (a pure-Python fallback is selected
at import time); the extension just makes the rotated-rectangle clipping
kernel fast enough for full-frame anchor matching.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "lidarocc._kernels._rectclip",
                ["src/lidarocc/_kernels/_rectclip.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
