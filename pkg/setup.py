import os
from glob import glob

from setuptools import find_packages, setup

package_name = "diffusivity"

setup(
  name=package_name,
  version="0.1.0",
  packages=find_packages(exclude=["test"]),
  data_files=[
    (
      os.path.join("share", package_name, "config"),
      glob(os.path.join("config", "*.yaml")),
    ),
  ],
  python_requires=">=3.9",
  install_requires=[
    "setuptools",
    "numpy>=1.22",
    "scipy>=1.9",
    "numba>=0.56",
    "pandas>=1.5",
    "PyYAML>=6.0",
  ],
  zip_safe=True,
  maintainer="apil",
  maintainer_email="078bct017.apil@pcampus.edu.np",
  description="Diffusivity estimation for the stochastic heat equation from local measurements",
  license="Apache-2.0",
  tests_require=["pytest", "flake8", "pydocstyle"],
  extras_require={"test": ["pytest", "flake8", "pydocstyle"]},
  entry_points={
    "console_scripts": [
      "diffusivity = diffusivity.cli:main",
      # Fake data
      "fake_sine_measurement = fake.sine_mode:main",
    ],
  },
)
