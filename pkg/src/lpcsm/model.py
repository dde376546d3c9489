"""Block and stack composition: norm -> {attention, memory read,
correction} -> fuse -> residual + FFN (optionally routed) -> heads."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .numerics import (
    Tensor, ParameterStore, NumericsError, rmsnorm, concat, stack, take_rows,
)
from .attention import AttentionConfig, local_attention, latent_attention
from .memory import (
    FastState, SlowState, ChunkAccumulator,
    fast_update, memory_read, accumulate, slow_write,
)
from .correction import predict_init, refine_step
from .controller import ControllerParams, clamp_ratio, event_scores, hard_mask
from .mhc import MixWeights, mhc_route


@dataclass
class ModelConfig:
    vocab_size: int
    width: int
    layers: int
    window: int = 8
    heads: int = 4
    chunk_size: int = 64
    s_ref: int = 2
    alpha_n: float = 0.5
    ratio_min: float = 0.05
    ratio_max: float = 0.95
    ratio_init: float = 0.25
    adaptive_ratio: bool = True
    temperature: float = 1.0
    mhc_streams: int = 4
    sinkhorn_iters: int = 20
    slow_memory: bool = True
    predictive_coding: bool = True
    ont: bool = True
    stop_head: bool = True
    mhc: bool = True
    max_seq_len: int = 256
    latent_dim: int | None = None
    rmsnorm_eps: float = 1e-6

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise NumericsError("width must be divisible by head count")
        if self.layers < 0 or self.width < 1 or self.vocab_size < 2:
            raise NumericsError("invalid model dimensions")
        if self.chunk_size < 1 or self.window < 1:
            raise NumericsError("chunk_size and window must be positive")
        if not (0 <= self.s_ref <= 8):
            raise NumericsError("s_ref must lie in 0..8")
        if self.alpha_n < 0.0:
            raise NumericsError("alpha_n must be >= 0 for model use")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            window=self.window, heads=self.heads,
            head_dim=self.head_dim, latent_dim=self.latent_dim,
        )

    def to_canonical(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_canonical(cls, text: str) -> "ModelConfig":
        kwargs = {}
        valid = {f.name for f in fields(cls)}
        for line in text.strip().splitlines():
            key, _, val = line.partition("=")
            if key not in valid:
                raise NumericsError(f"unknown config key {key!r} in canonical text")
            kwargs[key] = eval(val, {"__builtins__": {}})  # literals written by to_canonical
        return cls(**kwargs)


@dataclass
class LayerAux:
    error_norms: Tensor
    error_sq: Tensor | None
    mask: Tensor
    effective_ratio: float
    sparse_ratio_st: Tensor
    fast_final: Tensor
    slow_final: Tensor
    write_count: int


@dataclass
class BlockOutput:
    hidden: Tensor
    aux: LayerAux


@dataclass
class Logits:
    lm: Tensor
    stop: Tensor | None


def init_params(cfg: ModelConfig, seed: int = 0) -> ParameterStore:
    """Fresh parameter store; only enabled mechanisms get parameters."""
    from .controller import ratio_raw_init

    rng = np.random.default_rng(seed)
    params = ParameterStore()
    d, v, s = cfg.width, cfg.vocab_size, cfg.mhc_streams

    def mat(name, fan_in, fan_out):
        params.add(name, rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))

    def vec(name, n, value=0.0):
        params.add(name, np.full(n, value))

    params.add("embed.tok", rng.standard_normal((v, d)) * 0.5)
    params.add("embed.pos", rng.standard_normal((cfg.max_seq_len, d)) * 0.5)
    for l in range(cfg.layers):
        p = f"layers.{l}."
        vec(p + "norm1.gain", d, 1.0)
        if cfg.latent_dim is not None:
            mat(p + "attn.w_q", d, d); vec(p + "attn.b_q", d)
            mat(p + "attn.w_z", d, cfg.latent_dim); vec(p + "attn.b_z", cfg.latent_dim)
            mat(p + "attn.w_k_up", cfg.latent_dim, d); vec(p + "attn.b_k_up", d)
            mat(p + "attn.w_v_up", cfg.latent_dim, d); vec(p + "attn.b_v_up", d)
        else:
            mat(p + "attn.w_qkv", d, 3 * d); vec(p + "attn.b_qkv", 3 * d)
        mat(p + "attn.w_o", d, d); vec(p + "attn.b_o", d)
        for gate in ("w_d", "w_u", "w_qf", "w_qs"):
            mat(p + "mem." + gate, d, d)
        for gate in ("b_d", "b_u", "b_qf", "b_qs"):
            vec(p + "mem." + gate, d)
        mat(p + "mem.w_r", 2 * d, d); vec(p + "mem.b_r", d)
        if cfg.slow_memory:
            mat(p + "mem.w_g", d, d); vec(p + "mem.b_g", d)
            mat(p + "mem.w_c", d, d); vec(p + "mem.b_c", d)
        if cfg.predictive_coding:
            mat(p + "pred.w1", 2 * d, d); vec(p + "pred.b1", d)
            mat(p + "pred.w2", d, d); vec(p + "pred.b2", d)
            mat(p + "refine.w1", 3 * d, d); vec(p + "refine.b1", d)
            mat(p + "refine.w2", d, d); vec(p + "refine.b2", d)
        params.add(p + "ctrl.bias", 0.0)
        params.add(p + "ctrl.scale", 1.0)
        params.add(
            p + "ctrl.ratio_raw",
            ratio_raw_init(cfg.ratio_init, cfg.ratio_min, cfg.ratio_max),
            trainable=cfg.adaptive_ratio,
        )
        if cfg.mhc:
            vec(p + "mhc.pre", s, 1.0)
            vec(p + "mhc.post", s, 1.0 / s)
            params.add(p + "mhc.logits", np.zeros((s, s)))
        mat(p + "fuse.w", 3 * d, d); vec(p + "fuse.b", d)
        vec(p + "norm2.gain", d, 1.0)
        mat(p + "ffn.w1", d, 4 * d); vec(p + "ffn.b1", 4 * d)
        mat(p + "ffn.w2", 4 * d, d); vec(p + "ffn.b2", d)
    vec("final_norm.gain", d, 1.0)
    mat("lm_head.w", d, v); vec("lm_head.b", v)
    if cfg.stop_head:
        params.add("stop_head.w", rng.standard_normal(d) / np.sqrt(d))
        params.add("stop_head.b", 0.0)
    return params


def controller_params(params: ParameterStore, cfg: ModelConfig, prefix: str) -> ControllerParams:
    return ControllerParams(
        bias=params[prefix + "ctrl.bias"],
        scale=params[prefix + "ctrl.scale"],
        temperature=cfg.temperature,
        ratio_raw=params[prefix + "ctrl.ratio_raw"],
        ratio_min=cfg.ratio_min,
        ratio_max=cfg.ratio_max,
        adaptive=cfg.adaptive_ratio,
    )


def causal_mask_bits(error_norms: Tensor,
                     cp: ControllerParams) -> tuple[Tensor, Tensor, float]:
    """Per-position event bits using only each position's prefix statistics.

    Position t takes the bit assigned to it by the hard mask computed over
    scores of tokens 1..t, which keeps teacher forcing and incremental
    decode identical. Returns (hard bits, soft bits, ratio).
    """
    t_len = error_norms.shape[0]
    ratio = float(clamp_ratio(cp).data)
    hard_bits, soft_bits = [], []
    for t in range(t_len):
        scores = event_scores(error_norms[0:t + 1], cp)
        em = hard_mask(scores, ratio)
        hard_bits.append(em.hard[t])
        soft_bits.append(em.soft[t])
    return stack(hard_bits), stack(soft_bits), ratio


def block_forward(h: Tensor, layer: int, params: ParameterStore,
                  cfg: ModelConfig, soft_mask: bool = False) -> BlockOutput:
    t_len, d = h.shape
    p = f"layers.{layer}."
    try:
        n = rmsnorm(h, params[p + "norm1.gain"], cfg.rmsnorm_eps)

        acfg = cfg.attention_config()
        if cfg.latent_dim is not None:
            a = latent_attention(n, acfg, params, p + "attn.").read
        else:
            a = local_attention(n, acfg, params, p + "attn.").read

        # Memory pathway, tokenwise; the slow state only moves at boundaries
        # and the boundary write happens after that token's read.
        fast = FastState.zeros(d)
        slow = SlowState.zeros(d)
        acc = ChunkAccumulator.empty(d, cfg.chunk_size)
        r_rows = []
        write_count = 0
        for t in range(t_len):
            nt = n[t]
            fast = fast_update(nt, fast, params, p + "mem.")
            r_rows.append(memory_read(nt, fast, slow, params, p + "mem.").value)
            if cfg.slow_memory:
                acc = accumulate(acc, fast)
                if acc.count == cfg.chunk_size:
                    slow = slow_write(nt, acc, slow, cfg.alpha_n, cfg.ont,
                                      params, p + "mem.")
                    acc = ChunkAccumulator.empty(d, cfg.chunk_size)
                    write_count += 1
        r = stack(r_rows)

        # Predictive correction over the whole batch of positions.
        if cfg.predictive_coding:
            state = predict_init(a, r, params, p + "pred.")
            for _ in range(cfg.s_ref):
                state = refine_step(a, r, n, state, params, cfg.s_ref, p + "refine.")
            est = state.estimate
            diff = n - est
            err_sq = (diff * diff).sum(axis=-1)
            error_norms = err_sq.sqrt()
        else:
            est = None
            err_sq = None
            error_norms = Tensor(np.zeros(t_len))

        cp = controller_params(params, cfg, p)
        hard_bits, soft_bits, ratio = causal_mask_bits(error_norms, cp)
        mask = soft_bits if soft_mask else hard_bits
        density = float(hard_bits.data.mean())
        ratio_t = clamp_ratio(cp)
        if soft_mask:
            sparse_ratio_st = ratio_t
        else:
            # Straight-through ratio: forward value is the observed mask
            # density, backward flows into the bounded learnable ratio.
            sparse_ratio_st = ratio_t - ratio_t.detach() + density

        if cfg.predictive_coding:
            corrected = mask.reshape((t_len, 1)) * est
        else:
            corrected = Tensor(np.zeros((t_len, d)))

        fused = concat([a, r, corrected], axis=-1) @ params[p + "fuse.w"] \
            + params[p + "fuse.b"]
        resid = h + fused
        n2 = rmsnorm(resid, params[p + "norm2.gain"], cfg.rmsnorm_eps)
        update = (n2 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]).tanh() \
            @ params[p + "ffn.w2"] + params[p + "ffn.b2"]

        if cfg.mhc:
            w = MixWeights(
                pre_mix=params[p + "mhc.pre"],
                post_mix=params[p + "mhc.post"],
                transport_logits=params[p + "mhc.logits"],
            )
            out = mhc_route(resid, update, w, cfg.mhc_streams, cfg.sinkhorn_iters)
        else:
            out = resid + update
    except NumericsError as e:
        raise NumericsError(f"layer {layer}: {e}") from e

    aux = LayerAux(
        error_norms=error_norms,
        error_sq=err_sq,
        mask=mask,
        effective_ratio=density,
        sparse_ratio_st=sparse_ratio_st,
        fast_final=fast.value,
        slow_final=slow.value,
        write_count=write_count,
    )
    return BlockOutput(hidden=out, aux=aux)


def embed(tokens, params: ParameterStore, cfg: ModelConfig,
          position_offset: int = 0) -> Tensor:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 1:
        raise NumericsError("tokens must be a nonempty 1-D sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise NumericsError("token id out of vocabulary range")
    if position_offset + tokens.size > cfg.max_seq_len:
        raise NumericsError("sequence exceeds max_seq_len")
    tok = take_rows(params["embed.tok"], tokens)
    pos = params["embed.pos"][position_offset:position_offset + tokens.size]
    return tok + pos


def model_forward(tokens, params: ParameterStore, cfg: ModelConfig,
                  soft_mask: bool = False) -> tuple[Logits, list[LayerAux]]:
    """Teacher-forced pass: embedding, L blocks, final norm, two heads.

    `soft_mask` swaps the straight-through event mask for its soft
    surrogate; used by gradient checks, never by training or decode.
    """
    h = embed(tokens, params, cfg)
    aux_list = []
    for layer in range(cfg.layers):
        out = block_forward(h, layer, params, cfg, soft_mask=soft_mask)
        h = out.hidden
        aux_list.append(out.aux)
    n = rmsnorm(h, params["final_norm.gain"], cfg.rmsnorm_eps)
    lm = n @ params["lm_head.w"] + params["lm_head.b"]
    stop = None
    if cfg.stop_head:
        stop = n @ params["stop_head.w"] + params["stop_head.b"]
    return Logits(lm=lm, stop=stop), aux_list


def ablation_variants(cfg: ModelConfig) -> dict[str, ModelConfig]:
    """The five single-mechanism ablations of the full configuration."""
    return {
        "w/o slow memory": replace(cfg, slow_memory=False),
        "w/o predictive coding": replace(cfg, predictive_coding=False),
        "w/o ONT": replace(cfg, ont=False),
        "w/o stop head": replace(cfg, stop_head=False),
        "w/o mHC": replace(cfg, mhc=False),
    }
