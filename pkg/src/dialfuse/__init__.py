"""Audio-embedding-aware dialogue policy over frozen encoder activations."""

from .kernels import BACKEND
from .tensor import Tensor, grad_check

__version__ = "0.1.0"

__all__ = ["BACKEND", "Tensor", "grad_check", "__version__"]
