"""Guided depth super-resolution with dynamic dual alignment and
mask-to-pixel feature aggregation, built on a self-contained rank-4
autodiff core with compiled (Cython) or NumPy kernels."""

__version__ = "0.1.0"

from .autodiff import Parameter, Tape, Tensor, record
from .backend import backend_name, set_backend
from .model import D2A2Model, ModelConfig, build_model, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "Parameter", "Tape", "record",
    "backend_name", "set_backend",
    "ModelConfig", "D2A2Model", "build_model", "save_checkpoint", "load_checkpoint",
    "__version__",
]
