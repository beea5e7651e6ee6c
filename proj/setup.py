from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ext = Pybind11Extension(
    "tonguerx._core",
    sources=[
        "src/bindings/module.cpp",
        "src/autodiff.cpp",
        "src/lda.cpp",
        "src/augment.cpp",
        "src/image_io.cpp",
        "src/metrics.cpp",
        "src/model.cpp",
        "src/data.cpp",
        "src/commands.cpp",
    ],
    include_dirs=["include", "vendor"],
    libraries=["png"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
