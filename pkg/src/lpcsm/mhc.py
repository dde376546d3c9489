"""Multi-stream residual router: lift, Sinkhorn-normalized transport
across streams, and learned pre/post mixing around the block update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, NumericsError, _wrap, stack


@dataclass
class MixWeights:
    pre_mix: Tensor
    post_mix: Tensor
    transport_logits: Tensor


@dataclass
class TransportMatrix:
    matrix: Tensor


# Marginal-sum tolerance the transport matrix must reach, and the hard cap
# on extra normalization passes spent reaching it.
MARGINAL_TOL = 1e-7
MAX_EXTRA_PASSES = 10_000


def _marginal_residual(m: np.ndarray) -> float:
    return max(
        float(np.max(np.abs(m.sum(axis=0) - 1.0))),
        float(np.max(np.abs(m.sum(axis=1) - 1.0))),
    )


def sinkhorn_normalize(logits: Tensor, iters: int) -> TransportMatrix:
    """Alternate row/column normalization of exp(logits).

    Runs `iters` full passes, then keeps alternating until both marginal
    sums are within MARGINAL_TOL of 1; badly conditioned logits need far
    more passes than well-mixed ones, and the doubly-stochastic invariant
    is the contract that matters downstream. Gradients flow through every
    unrolled pass.
    """
    logits = _wrap(logits)
    if iters < 1:
        raise NumericsError("sinkhorn iters must be >= 1")
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise NumericsError("sinkhorn expects square logits")
    m = logits.exp()
    for i in range(iters + MAX_EXTRA_PASSES):
        m = m / m.sum(axis=1, keepdims=True)
        m = m / m.sum(axis=0, keepdims=True)
        if i + 1 >= iters and _marginal_residual(m.data) <= MARGINAL_TOL:
            return TransportMatrix(matrix=m)
    raise NumericsError("sinkhorn failed to reach doubly-stochastic marginals")


def mhc_route(h_in: Tensor, block_update: Tensor, w: MixWeights,
              streams: int, iters: int) -> Tensor:
    """Route the residual through `streams` scalar-lifted copies.

    streams_i = pre_mix_i * h_in; the doubly-stochastic transport mixes the
    stream axis; post-mix coefficients collapse back to one stream and the
    block update is injected additively. Accepts a vector or a [T, d] batch.
    """
    h_in, block_update = _wrap(h_in), _wrap(block_update)
    if streams < 2:
        raise NumericsError("mhc requires at least 2 streams")
    if w.pre_mix.shape != (streams,) or w.post_mix.shape != (streams,):
        raise NumericsError("mix weight shapes inconsistent with stream count")
    transport = sinkhorn_normalize(w.transport_logits, iters).matrix
    flat = h_in.reshape((1, h_in.size))
    lifted = stack([(w.pre_mix[i] * flat)[0] for i in range(streams)])
    routed = transport @ lifted
    collapsed = w.post_mix.reshape((1, streams)) @ routed
    return collapsed.reshape(h_in.shape) + block_update
