"""Hybrid autoregressive block family: local attention, dual-timescale
memory with orthogonal-novelty slow writes, predictive correction, sparse
event control, and Sinkhorn-normalized residual routing."""

from .numerics import (
    Tensor, ParameterStore, GradReport, NumericsError,
    no_grad, rmsnorm, grad_check, forward_backward,
)
from .model import ModelConfig, model_forward, init_params
from .objective import LossWeights
from .runtime import init_cache, step_decode, generate

__all__ = [
    "Tensor", "ParameterStore", "GradReport", "NumericsError",
    "no_grad", "rmsnorm", "grad_check", "forward_backward",
    "ModelConfig", "model_forward", "init_params", "LossWeights",
    "init_cache", "step_decode", "generate",
]
