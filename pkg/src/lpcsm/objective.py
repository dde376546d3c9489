"""Five-term training objective and the momentum-SGD optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, ParameterStore, NumericsError
from .model import ModelConfig, LayerAux


@dataclass
class LossWeights:
    lambda_pred: float = 0.1
    lambda_sparse: float = 0.01
    lambda_mem: float = 0.001
    lambda_stop: float = 0.1

    def __post_init__(self):
        if min(self.lambda_pred, self.lambda_sparse,
               self.lambda_mem, self.lambda_stop) < 0.0:
            raise NumericsError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    lm: Tensor
    pred: Tensor
    sparse: Tensor
    mem: Tensor
    stop: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "lm": self.lm.item(), "pred": self.pred.item(),
            "sparse": self.sparse.item(), "mem": self.mem.item(),
            "stop": self.stop.item(), "total": self.total.item(),
        }


def log_softmax(logits: Tensor) -> Tensor:
    # Row-max subtraction is detached; its gradient contribution cancels in
    # exact arithmetic.
    shifted = logits - Tensor(logits.data.max(axis=-1, keepdims=True))
    return shifted - shifted.exp().sum(axis=-1, keepdims=True).log()


def lm_loss(logits: Tensor, targets) -> Tensor:
    """Mean next-token cross-entropy; alignment is the caller's job."""
    targets = np.asarray(targets, dtype=np.int64)
    t_len, vocab = logits.shape
    if targets.shape != (t_len,):
        raise NumericsError("target length mismatch")
    if targets.min() < 0 or targets.max() >= vocab:
        raise NumericsError("target index out of range")
    onehot = np.zeros((t_len, vocab))
    onehot[np.arange(t_len), targets] = 1.0
    return -(log_softmax(logits) * Tensor(onehot)).sum(axis=-1).mean()


def binary_cross_entropy_logits(scores: Tensor, targets) -> Tensor:
    """Mean BCE of sigmoid scores against {0,1} targets, in logit form."""
    y = Tensor(np.asarray(targets, dtype=np.float64))
    if y.shape != scores.shape:
        raise NumericsError("stop target shape mismatch")
    # log(1 + exp(s)) - s*y; desk-scale scores stay far from overflow.
    return ((scores.exp() + 1.0).log() - scores * y).mean()


def aux_losses(aux: list[LayerAux], stop_scores: Tensor | None, eos_targets,
               cfg: ModelConfig) -> dict[str, Tensor]:
    """The four auxiliary terms; toggled-off mechanisms contribute exact 0."""
    zero = Tensor(0.0)
    n_layers = max(1, len(aux))

    if cfg.predictive_coding and aux:
        pred = sum((a.error_sq.mean() for a in aux), zero) * (1.0 / n_layers)
    else:
        pred = zero

    if aux:
        sparse = sum((a.sparse_ratio_st * a.sparse_ratio_st for a in aux),
                     zero) * (1.0 / n_layers)
    else:
        sparse = zero

    if aux:
        mem = sum(
            (((a.fast_final * a.fast_final).sum()
              + (a.slow_final * a.slow_final).sum()) * (1.0 / cfg.width)
             for a in aux),
            zero,
        ) * (1.0 / n_layers)
    else:
        mem = zero

    if cfg.stop_head:
        if stop_scores is None:
            raise NumericsError("stop head enabled but no stop scores provided")
        stop = binary_cross_entropy_logits(stop_scores, eos_targets)
    else:
        stop = zero

    return {"pred": pred, "sparse": sparse, "mem": mem, "stop": stop}


def total_loss(lm: Tensor, parts: dict[str, Tensor],
               weights: LossWeights) -> LossBreakdown:
    """Weighted sum; zero-weight terms are skipped so they contribute
    exactly nothing to the value or the gradient."""
    total = lm
    for name, lam in (("pred", weights.lambda_pred),
                      ("sparse", weights.lambda_sparse),
                      ("mem", weights.lambda_mem),
                      ("stop", weights.lambda_stop)):
        if lam != 0.0:
            total = total + parts[name] * lam
    return LossBreakdown(lm=lm, pred=parts["pred"], sparse=parts["sparse"],
                         mem=parts["mem"], stop=parts["stop"], total=total)


@dataclass
class SgdConfig:
    lr: float = 3e-4
    momentum: float = 0.9
    clip_norm: float = 1.0


@dataclass
class SgdState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ParameterStore, grads: dict[str, Tensor],
             cfg: SgdConfig) -> None:
        norm_sq = sum(float((g.data * g.data).sum()) for g in grads.values())
        norm = np.sqrt(norm_sq)
        scale = 1.0 if norm <= cfg.clip_norm else cfg.clip_norm / norm
        for name, g in grads.items():
            v = self.velocity.get(name)
            gd = g.data * scale
            v = gd if v is None else cfg.momentum * v + gd
            self.velocity[name] = v
            p = params[name]
            p.data = p.data - cfg.lr * v
