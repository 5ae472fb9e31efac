"""Minimal numpy network engine: layers, forward/backward, optimizers, checks."""
from .gradcheck import GradCheckReport, gradient_check, rel_error
from .layers import (
    Add,
    AvgPoolToGrid,
    ConcatCh,
    Conv2D,
    Dense,
    LayerSpec,
    MaxPool2,
    ReLU,
    Sigmoid,
    UpsampleBilinear,
)
from .network import INPUT, Network, load_params, param_count, save_params
from .optim import SGD, Adam, optimizer_step

__all__ = [
    "Add", "Adam", "AvgPoolToGrid", "ConcatCh", "Conv2D", "Dense", "GradCheckReport",
    "INPUT", "LayerSpec", "MaxPool2", "Network", "ReLU", "SGD", "Sigmoid",
    "UpsampleBilinear", "gradient_check", "load_params", "optimizer_step",
    "param_count", "rel_error", "save_params",
]
