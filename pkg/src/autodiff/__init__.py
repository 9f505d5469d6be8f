"""Minimal fp64 autodiff: tensors, operations and parameter containers."""

from src.autodiff import ops
from src.autodiff.module import Module, Parameter, trunc_normal, xavier_uniform
from src.autodiff.tensor import (
    ComputationTape,
    ContractError,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    no_grad,
)

__all__ = [
    "ComputationTape",
    "ContractError",
    "Module",
    "NumericError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "backward",
    "no_grad",
    "ops",
    "trunc_normal",
    "xavier_uniform",
]
