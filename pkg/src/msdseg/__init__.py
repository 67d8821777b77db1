"""Few-shot semantic segmentation on a self-contained f64 autograd engine."""

from .autograd import Tape, Tensor, backward
from .gradcheck import grad_check
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "backward", "grad_check", "KERNEL_BACKEND", "__version__"]
