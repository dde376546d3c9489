"""Orthogonal novelty transport for slow-memory writes.

Decomposes a chunk summary into the component aligned with the current
slow state and the orthogonal novelty remainder, amplifies only the
novelty, and certifies the result against a closed-form affine-projection
oracle plus the variational write objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, NumericsError, _wrap

# Below this norm the reference state is treated as zero; the exact-zero
# dichotomy is an exact-arithmetic statement and 1/||m||^2 would overflow
# on denormals.
ZERO_NORM_FLOOR = 1e-30


@dataclass
class NoveltyDecomposition:
    aligned: Tensor
    novelty: Tensor
    reference_norm_sq: float


@dataclass
class TransportResult:
    transported: Tensor
    alpha: float
    decomposition: NoveltyDecomposition


def _check_lengths(c: Tensor, m: Tensor) -> None:
    if c.shape != m.shape or c.ndim != 1:
        raise NumericsError(f"vector length mismatch: {c.shape} vs {m.shape}")


def _reference_is_zero(m: Tensor) -> bool:
    return float(np.linalg.norm(m.data)) < ZERO_NORM_FLOOR


def ont_proj(c: Tensor, m: Tensor) -> Tensor:
    """Component of c aligned with m; the zero vector when m = 0."""
    c, m = _wrap(c), _wrap(m)
    _check_lengths(c, m)
    if _reference_is_zero(m):
        return c * 0.0
    return m * ((c * m).sum() / (m * m).sum())


def ont_novelty(c: Tensor, m: Tensor) -> Tensor:
    """Component of c orthogonal to m."""
    c, m = _wrap(c), _wrap(m)
    return c - ont_proj(c, m)


def decompose(c: Tensor, m: Tensor) -> NoveltyDecomposition:
    c, m = _wrap(c), _wrap(m)
    aligned = ont_proj(c, m)
    return NoveltyDecomposition(
        aligned=aligned,
        novelty=c - aligned,
        reference_norm_sq=float((m.data * m.data).sum()),
    )


def ont_transport(alpha: float, c: Tensor, m: Tensor) -> TransportResult:
    """Transported summary c + alpha * novelty; keeps <x, m> = <c, m>."""
    c, m = _wrap(c), _wrap(m)
    d = decompose(c, m)
    if _reference_is_zero(m):
        # Zero reference: the whole summary is novelty, so the transport is
        # exactly the unconstrained amplification.
        transported = c * (1.0 + alpha)
    else:
        transported = c + d.novelty * alpha
    return TransportResult(transported=transported, alpha=alpha, decomposition=d)


def ont_target(alpha: float, c: Tensor) -> Tensor:
    """Unconstrained amplification (1 + alpha) * c."""
    return _wrap(c) * (1.0 + alpha)


def ont_oracle_min(alpha: float, c: Tensor, m: Tensor) -> Tensor:
    """Projection of the target onto the feasible set {x : <x,m> = <c,m>}.

    Independent of the transport path: computed directly as
    Y + ((<c,m> - <Y,m>) / ||m||^2) * m, with Y itself when m = 0.
    """
    c, m = _wrap(c), _wrap(m)
    _check_lengths(c, m)
    y = ont_target(alpha, c)
    if _reference_is_zero(m):
        return y
    gap = (c * m).sum() - (y * m).sum()
    return y + m * (gap / (m * m).sum())


def ont_write_objective(alpha: float, c: Tensor, m: Tensor, x: Tensor) -> float:
    """Write cost: proximity to c minus alpha times motion along the novelty."""
    c, m, x = _wrap(c), _wrap(m), _wrap(x)
    _check_lengths(c, m)
    _check_lengths(c, x)
    n = ont_novelty(c, m)
    diff = x - c
    return 0.5 * float((diff * diff).sum().item()) - alpha * float((diff * n).sum().item())


# -- standalone property suite ---------------------------------------------


@dataclass
class PropertyCheck:
    name: str
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def verify_properties(trials: int = 1000, seed: int = 0) -> tuple[list[PropertyCheck], float]:
    """Randomized check of the transport's formal properties.

    Draws random (alpha, c, m) in dims 1..64 with alpha in [-2, 4]
    including 0, and m = 0 cases mixed in. Returns the per-property
    worst errors and the wall-clock runtime.
    """
    rng = np.random.default_rng(seed)
    errs = {
        "feasibility": 0.0,
        "decomposition": 0.0,
        "aligned_gap": 0.0,
        "pythagorean": 0.0,
        "oracle_equivalence": 0.0,
        "variational": 0.0,
        "zero_reference": 0.0,
    }
    t0 = time.perf_counter()
    for trial in range(trials):
        dim = int(rng.integers(1, 65))
        if trial % 10 == 0:
            alpha = 0.0
        else:
            alpha = float(rng.uniform(-2.0, 4.0))
        c = rng.standard_normal(dim)
        m = np.zeros(dim) if trial % 7 == 0 else rng.standard_normal(dim)
        ct, mt = Tensor(c), Tensor(m)

        res = ont_transport(alpha, ct, mt)
        t = res.transported.data
        p = res.decomposition.aligned.data
        n = res.decomposition.novelty.data
        y = ont_target(alpha, ct).data

        scale = max(1.0, float(np.linalg.norm(c) * np.linalg.norm(m)))
        errs["feasibility"] = max(
            errs["feasibility"], abs(float(t @ m) - float(c @ m)) / scale
        )
        errs["decomposition"] = max(
            errs["decomposition"], float(np.max(np.abs(p + n - c), initial=0.0))
        )
        errs["aligned_gap"] = max(
            errs["aligned_gap"], float(np.max(np.abs((t - y) + alpha * p), initial=0.0))
        )

        # Random feasible point: transport plus a perturbation orthogonal to m.
        pert = rng.standard_normal(dim)
        if np.linalg.norm(m) >= ZERO_NORM_FLOOR:
            pert = pert - (pert @ m) / (m @ m) * m
        x = t + pert
        lhs = float(((x - y) ** 2).sum())
        rhs = float(((x - t) ** 2).sum()) + float(((t - y) ** 2).sum())
        errs["pythagorean"] = max(
            errs["pythagorean"], abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
        )

        oracle = ont_oracle_min(alpha, ct, mt).data
        errs["oracle_equivalence"] = max(
            errs["oracle_equivalence"], float(np.max(np.abs(oracle - t), initial=0.0))
        )

        # Variational identity holds for arbitrary x, feasible or not.
        x_any = x if trial % 2 == 0 else c + rng.standard_normal(dim)
        jx = ont_write_objective(alpha, ct, mt, Tensor(x_any))
        jt = ont_write_objective(alpha, ct, mt, res.transported)
        half_sq = 0.5 * float(((x_any - t) ** 2).sum())
        errs["variational"] = max(
            errs["variational"],
            abs((jx - jt) - half_sq) / max(1.0, abs(jx - jt), half_sq),
        )

        if np.linalg.norm(m) < ZERO_NORM_FLOOR:
            errs["zero_reference"] = max(
                errs["zero_reference"],
                float(np.max(np.abs(t - (1.0 + alpha) * c), initial=0.0)),
            )
    elapsed = time.perf_counter() - t0

    tols = {
        "feasibility": 1e-10,
        "decomposition": 1e-12,
        "aligned_gap": 1e-12,
        "pythagorean": 1e-9,
        "oracle_equivalence": 1e-10,
        "variational": 1e-9,
        "zero_reference": 0.0,
    }
    checks = [PropertyCheck(k, errs[k], tols[k]) for k in errs]
    return checks, elapsed
