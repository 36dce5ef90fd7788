"""Nasalance extraction and acoustic-to-nasality speech inversion."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
