"""Training loop, evaluation, the delayed-identifier probe, and the
ablation driver."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .numerics import Tensor, ParameterStore, NumericsError, forward_backward, no_grad
from .model import ModelConfig, init_params, model_forward, ablation_variants
from .objective import (
    LossWeights, SgdConfig, SgdState, LossBreakdown,
    lm_loss, aux_losses, total_loss, log_softmax,
)
from .data import SyntheticTask, make_batch, recall_key_slice, EOS
from .config import RunConfig

METRICS_HEADER = "step,lm,pred,sparse,mem,stop,total,effective_ratio,tokens_per_second"


class TrainingDivergedError(Exception):
    """Non-finite loss; carries the step index and a state summary."""

    def __init__(self, step: int, detail: str):
        super().__init__(f"non-finite loss at step {step}: {detail}")
        self.step = step


def sequence_loss(tokens: np.ndarray, targets: np.ndarray,
                  params: ParameterStore, cfg: ModelConfig,
                  weights: LossWeights,
                  soft_mask: bool = False) -> tuple[LossBreakdown, float]:
    """Total objective for one teacher-forced sequence."""
    logits, aux = model_forward(tokens, params, cfg, soft_mask=soft_mask)
    lm = lm_loss(logits.lm, targets)
    eos_targets = (targets == EOS).astype(np.float64)
    parts = aux_losses(aux, logits.stop, eos_targets, cfg)
    breakdown = total_loss(lm, parts, weights)
    ratio = float(np.mean([a.effective_ratio for a in aux])) if aux else 0.0
    return breakdown, ratio


@dataclass
class TrainResult:
    params: ParameterStore
    metrics: list  # rows matching METRICS_HEADER
    final_lm: float
    final_ratio: float
    tokens_per_second: float


def train(run: RunConfig, steps: int | None = None, seed: int | None = None,
          metrics_out=None) -> TrainResult:
    """Seeded deterministic training; one CSV row per step."""
    steps = run.train.steps if steps is None else steps
    seed = run.train.seed if seed is None else seed
    cfg = run.model
    params = init_params(cfg, seed=seed)
    opt = SgdState()
    if metrics_out is not None:
        metrics_out.write(METRICS_HEADER + "\n")
    metrics = []
    final_lm = float("nan")
    final_ratio = 0.0
    tps = 0.0
    for step in range(steps):
        t0 = time.perf_counter()
        inputs, targets = make_batch(run.task, run.train.batch_size, index=step)
        params.zero_grad()
        accum: dict[str, np.ndarray] = {}
        vals = {"lm": 0.0, "pred": 0.0, "sparse": 0.0, "mem": 0.0,
                "stop": 0.0, "total": 0.0}
        ratios = []
        b = inputs.shape[0]
        for i in range(b):
            try:
                breakdown, ratio = sequence_loss(inputs[i], targets[i],
                                                 params, cfg, run.loss)
                grads = forward_backward(breakdown.total * (1.0 / b), params)
            except NumericsError as e:
                raise TrainingDivergedError(step, str(e)) from e
            for k, v in breakdown.values().items():
                if not np.isfinite(v):
                    raise TrainingDivergedError(step, f"{k} is non-finite")
                vals[k] += v / b
            ratios.append(ratio)
            for name, g in grads.items():
                accum[name] = g.data if name not in accum else accum[name] + g.data
        opt.step(params, {n: Tensor(g) for n, g in accum.items()}, run.optimizer)
        elapsed = time.perf_counter() - t0
        tps = b * inputs.shape[1] / elapsed
        final_lm = vals["lm"]
        final_ratio = float(np.mean(ratios))
        row = (step, vals["lm"], vals["pred"], vals["sparse"], vals["mem"],
               vals["stop"], vals["total"], final_ratio, tps)
        metrics.append(row)
        if metrics_out is not None:
            metrics_out.write(
                f"{step},{vals['lm']!r},{vals['pred']!r},{vals['sparse']!r},"
                f"{vals['mem']!r},{vals['stop']!r},{vals['total']!r},"
                f"{final_ratio!r},{tps:.1f}\n"
            )
    return TrainResult(params=params, metrics=metrics, final_lm=final_lm,
                       final_ratio=final_ratio, tokens_per_second=tps)


def evaluate(params: ParameterStore, cfg: ModelConfig, task: SyntheticTask,
             weights: LossWeights, batch: int = 4,
             index: int = 10_000) -> dict[str, float]:
    """Mean loss terms over a held-out batch (distinct stream index)."""
    inputs, targets = make_batch(task, batch, index=index)
    out = {"lm": 0.0, "pred": 0.0, "sparse": 0.0, "mem": 0.0,
           "stop": 0.0, "total": 0.0}
    with no_grad():
        for i in range(inputs.shape[0]):
            breakdown, _ = sequence_loss(inputs[i], targets[i], params, cfg, weights)
            for k, v in breakdown.values().items():
                out[k] += v / inputs.shape[0]
    return out


@dataclass
class ProbeSpec:
    n_prompts: int = 6
    prompt_len: int = 192
    distractor_len: int = 128
    key_len: int = 8
    seed: int = 1234


@dataclass
class ProbeResult:
    key_cross_entropy: float
    prompt_length: int
    config_fingerprint: str


def probe_delayed_identifier(params: ParameterStore, cfg: ModelConfig,
                             spec: ProbeSpec | None = None) -> ProbeResult:
    """Teacher-forced key cross-entropy on delayed-identifier prompts."""
    spec = spec or ProbeSpec()
    if spec.key_len < 1:
        raise NumericsError("probe key region is empty")
    if spec.prompt_len > cfg.max_seq_len:
        raise NumericsError("probe prompt exceeds max_seq_len")
    task = SyntheticTask(
        kind="key-recall", vocab_size=cfg.vocab_size, seq_len=spec.prompt_len,
        key_len=spec.key_len, distractor_len=spec.distractor_len, seed=spec.seed,
    )
    inputs, targets = make_batch(task, spec.n_prompts, index=0)
    key = recall_key_slice(task)
    ce = 0.0
    with no_grad():
        for i in range(spec.n_prompts):
            logits, _ = model_forward(inputs[i], params, cfg)
            lp = log_softmax(logits.lm).data
            picked = lp[np.arange(task.seq_len), targets[i]]
            ce += -float(picked[key].mean()) / spec.n_prompts
    return ProbeResult(
        key_cross_entropy=ce,
        prompt_length=spec.prompt_len,
        config_fingerprint=str(hash(cfg.to_canonical())),
    )


@dataclass
class AblationRow:
    variant: str
    final_lm: float
    delta_pct: float
    tokens_per_second: float
    final_ratio: float


def ablate(run: RunConfig, toggles: list[str] | None = None,
           steps: int | None = None, seed: int | None = None) -> list[AblationRow]:
    """Train the full model and each requested single-toggle ablation on
    the same seeded data stream."""
    variants = ablation_variants(run.model)
    if toggles is None:
        toggles = list(variants)
    unknown = [t for t in toggles if t not in variants]
    if unknown:
        raise NumericsError(f"unknown ablation toggles: {unknown}")
    rows = []
    full = train(run, steps=steps, seed=seed)
    rows.append(AblationRow("Full", full.final_lm, 0.0,
                            full.tokens_per_second, full.final_ratio))
    for name in toggles:
        res = train(replace(run, model=variants[name]), steps=steps, seed=seed)
        delta = 100.0 * (res.final_lm - full.final_lm) / full.final_lm
        rows.append(AblationRow(name, res.final_lm, delta,
                                res.tokens_per_second, res.final_ratio))
    return rows
