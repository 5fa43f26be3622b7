"""Continuous spatial-temporal forecasting with nested graph/temporal neural ODEs."""
from .autodiff import ContractError, DimensionError, Tensor, no_grad
from .kernels import BACKEND
from .model import Forecaster, ModelConfig, build_variant, loss_mae
from .solver import SolverSpec, integrate, integrate_trajectory

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContractError",
    "DimensionError",
    "Forecaster",
    "ModelConfig",
    "SolverSpec",
    "Tensor",
    "build_variant",
    "integrate",
    "integrate_trajectory",
    "loss_mae",
    "no_grad",
]
