"""Build the optional compiled kernels; fall back to pure Python on failure."""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            print(f"warning: compiled kernels not built ({exc}); using pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using pure Python")


def extensions():
    if os.environ.get("KAHLERLAB_PURE_PYTHON") == "1":
        return []
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    return cythonize(
        [Extension("kahlerlab._core", ["src/kahlerlab/_core.pyx"])],
        compiler_directives={"language_level": 3, "boundscheck": False,
                             "wraparound": False, "cdivision": True},
        quiet=True,
    ) if os.path.exists("src/kahlerlab/_core.pyx") else []


exts = extensions()
if exts:
    import numpy
    for e in exts:
        e.include_dirs.append(numpy.get_include())

setup(ext_modules=exts, cmdclass={"build_ext": OptionalBuildExt})
