"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import check_gradients, numerical_grad, relative_error
from .tensor import GRAD_RULES, ContractError, DimensionError, Tensor, as_tensor, corrupted_rule, register

__all__ = [
    "GRAD_RULES",
    "ContractError",
    "DimensionError",
    "Tensor",
    "as_tensor",
    "check_gradients",
    "corrupted_rule",
    "numerical_grad",
    "ops",
    "register",
    "relative_error",
]
