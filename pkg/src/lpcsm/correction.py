"""Predictive correction: estimate the hidden state from the attention and
memory reads, then iteratively refine against the explicit mismatch."""

from __future__ import annotations

from dataclasses import dataclass

from .numerics import Tensor, ParameterStore, NumericsError, concat


@dataclass
class PredictionState:
    estimate: Tensor
    step: int
    last_error: Tensor | None = None


@dataclass
class ErrorStats:
    per_token_error_norm: Tensor
    mean_error: float


def _mlp(x: Tensor, params: ParameterStore, prefix: str) -> Tensor:
    h = (x @ params[prefix + "w1"] + params[prefix + "b1"]).tanh()
    return h @ params[prefix + "w2"] + params[prefix + "b2"]


def predict_init(a: Tensor, r: Tensor, params: ParameterStore,
                 prefix: str = "pred.") -> PredictionState:
    """Initial estimate from the concatenated attention and memory reads."""
    if a.shape != r.shape:
        raise NumericsError("predict_init width mismatch")
    est = _mlp(concat([a, r], axis=-1), params, prefix)
    return PredictionState(estimate=est, step=0)


def refine_step(a: Tensor, r: Tensor, h: Tensor, state: PredictionState,
                params: ParameterStore, max_steps: int,
                prefix: str = "refine.") -> PredictionState:
    """One additive refinement driven by the current mismatch h - estimate."""
    if state.step >= max_steps:
        raise NumericsError("refinement step budget exhausted")
    err = h - state.estimate
    est = state.estimate + _mlp(concat([a, r, err], axis=-1), params, prefix)
    return PredictionState(estimate=est, step=state.step + 1, last_error=h - est)


def run_refinement(a: Tensor, r: Tensor, h: Tensor, params: ParameterStore,
                   steps: int) -> PredictionState:
    """Initialize then apply the configured number of refinement steps."""
    state = predict_init(a, r, params)
    for _ in range(steps):
        state = refine_step(a, r, h, state, params, max_steps=steps)
    if state.last_error is None:
        state.last_error = h - state.estimate
    return state


def error_stats(h: Tensor, estimates: Tensor) -> ErrorStats:
    """Per-token L2 mismatch norm and its mean."""
    if h.shape != estimates.shape:
        raise NumericsError("error_stats shape mismatch")
    diff = h - estimates
    norms = (diff * diff).sum(axis=-1).sqrt()
    return ErrorStats(per_token_error_norm=norms, mean_error=float(norms.data.mean()))
