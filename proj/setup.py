import glob
import os

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup


def eigen_include():
    candidates = [
        os.environ.get("EIGEN3_INCLUDE"),
        "/usr/include/eigen3",
        "/usr/local/include/eigen3",
        "/opt/homebrew/include/eigen3",
    ]
    for cand in candidates:
        if cand and os.path.isdir(cand):
            return cand
    raise RuntimeError("Eigen headers not found; set EIGEN3_INCLUDE")


ext = Pybind11Extension(
    "rost._rost",
    sources=sorted(glob.glob("src/*.cpp")) + ["bindings/py_module.cpp"],
    include_dirs=["include", "vendor", eigen_include()],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
