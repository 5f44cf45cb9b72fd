"""Curriculum multi-task self-supervised pretraining for hyperspectral image cubes."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
