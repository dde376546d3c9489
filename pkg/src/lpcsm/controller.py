"""Learned sparse event controller: normalized error scores, a learned
bias-scale transform with temperature, and a straight-through hard
threshold at a learnable bounded density."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, NumericsError, _wrap, straight_through

SCORE_STD_EPS = 1e-6


@dataclass
class ControllerParams:
    bias: Tensor
    scale: Tensor
    temperature: float
    ratio_raw: Tensor
    ratio_min: float
    ratio_max: float
    adaptive: bool

    def __post_init__(self):
        if not (0.0 < self.ratio_min < self.ratio_max <= 1.0):
            raise NumericsError("controller ratio bounds must satisfy 0 < min < max <= 1")
        if self.temperature <= 0.0:
            raise NumericsError("controller temperature must be positive")


@dataclass
class EventMask:
    hard: Tensor
    soft: Tensor
    effective_ratio: float


def ratio_raw_init(target: float, ratio_min: float, ratio_max: float) -> float:
    """Inverse of the sigmoid clamp, so the initial ratio equals `target`."""
    u = (target - ratio_min) / (ratio_max - ratio_min)
    return math.log(u / (1.0 - u))


def clamp_ratio(p: ControllerParams) -> Tensor:
    """Sigmoid-bounded ratio in (ratio_min, ratio_max)."""
    return p.ratio_raw.sigmoid() * (p.ratio_max - p.ratio_min) + p.ratio_min


def event_scores(error_norms: Tensor, p: ControllerParams) -> Tensor:
    """Normalize errors (population std), apply bias-scale and temperature."""
    e = _wrap(error_norms)
    if e.ndim != 1 or e.shape[0] < 1:
        raise NumericsError("event_scores expects a nonempty [T] vector")
    mu = e.mean()
    centered = e - mu
    var = (centered * centered).mean()
    if float(var.data) == 0.0:
        # Degenerate prefix (constant errors): sqrt has no gradient at 0,
        # and the eps-floored denominator is the correct limit anyway.
        z = centered * (1.0 / SCORE_STD_EPS)
    else:
        z = centered / (var.sqrt() + SCORE_STD_EPS)
    return (z * p.scale + p.bias) * (1.0 / p.temperature)


def hard_mask(scores: Tensor, ratio: float) -> EventMask:
    """Top-ceil(ratio*T) binary mask with index tie-break; straight-through.

    The threshold is the smallest selected score; ties resolve toward the
    lower index so the cardinality is exact. The hard tensor's backward
    pass is the sigmoid soft path around the (detached) threshold.
    """
    scores = _wrap(scores)
    t_len = scores.shape[0]
    if not (0.0 < ratio <= 1.0):
        raise NumericsError("mask ratio must lie in (0, 1]")
    k = int(math.ceil(ratio * t_len))
    order = np.argsort(-scores.data, kind="stable")
    selected = order[:k]
    hard_vals = np.zeros(t_len)
    hard_vals[selected] = 1.0
    # The threshold is the smallest selected score, kept differentiable so
    # the soft path is a locally exact function of the scores.
    theta = scores[int(order[k - 1])]
    soft = (scores - theta).sigmoid()
    return EventMask(
        hard=straight_through(hard_vals, soft),
        soft=soft,
        effective_ratio=k / t_len,
    )
