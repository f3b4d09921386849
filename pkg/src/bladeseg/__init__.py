"""Synthetic wind-turbine blade defect data and a numpy U-Net segmenter."""

from ._jit import BACKEND

__version__ = "0.1.0"
GENERATOR_VERSION = "bladeseg-gen/1"

__all__ = ["BACKEND", "GENERATOR_VERSION", "__version__"]
