import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

# -ffp-contract=off keeps a*b+c unfused so the kernels' summation order is
# exactly the documented one on every host.
compile_args = ["-O3", "-ffp-contract=off"]
if os.environ.get("WAVERNN_ENGINE_NATIVE") == "1":
    compile_args.append("-march=native")


class OptionalBuildExt(build_ext):
    """Build the compiled kernels if possible; the numpy fallback covers failures."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback",
                  file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback",
                  file=sys.stderr)


def extensions():
    if os.environ.get("WAVERNN_ENGINE_PURE") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "wavernn_engine.kernels._ckernels",
        ["src/wavernn_engine/kernels/_ckernels.pyx"],
        extra_compile_args=compile_args,
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
