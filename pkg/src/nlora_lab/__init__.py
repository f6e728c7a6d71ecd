"""Continual-learning laboratory for l1-sparsified low-rank adapters."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
