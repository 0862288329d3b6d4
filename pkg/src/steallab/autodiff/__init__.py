"""Minimal reverse-mode autodiff over float64 numpy arrays."""

from . import functional
from ._kernels import backend
from .gradcheck import GradCheckReport, grad_check
from .nn import (BatchNorm, Conv2d, Flatten, Linear, MaxPool2d, Module, ReLU, Reshape,
                 Sequential, Tanh, Upsample)
from .optim import SGD, Adam, LrSchedule, MissingGradError, Optimizer, default_schedule
from .tensor import Parameter, TapeError, Tensor, as_tensor, no_grad

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "Flatten", "GradCheckReport", "Linear", "LrSchedule",
    "MaxPool2d", "MissingGradError", "Module", "Optimizer", "Parameter", "ReLU", "Reshape",
    "SGD", "Sequential", "Tanh", "TapeError", "Tensor", "Upsample", "as_tensor", "backend",
    "functional", "grad_check", "no_grad", "default_schedule",
]
