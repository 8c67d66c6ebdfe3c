"""
Geometry self-attention.

Attention weights are ``Softmax(Q K^T / sqrt(d))``; geometry attention multiplies them
elementwise by ``beta ** G`` after the softmax and does not renormalise, so every row
of the decayed weights sums to at most 1.

Axial attention runs a horizontal pass (each row attends over its W tokens, decayed by
Gx) that produces U, then a vertical pass where each column's original queries and keys
attend over U along H, decayed by Gy. Only U is reused; queries and keys are not
recomputed from it.
"""

import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from app.errors import DimensionError, ParameterError
from app.kernel import ops
from app.kernel.nn import Module, parameter, trunc_normal
from app.kernel.tensor import WIDE, Tensor
from app.services.geometry_prior import FusionMemory, FusionMode, GeometryPrior, PriorKind

logger = logging.getLogger(__name__)

Rates = Union[float, Sequence[float], np.ndarray]


class AttentionMode(str, Enum):
    FULL = "full"
    AXIAL = "axial"


# Decay schedules -------------------------------------------------------------

_STRATEGY_RE = re.compile(r"^\s*(fixed|linear)\s*\(\s*([^,()]+?)\s*(?:,\s*([^,()]+?)\s*)?\)\s*$")


@dataclass(frozen=True)
class DecayStrategy:
    """``fixed(v)`` fills every head with v; ``linear(lo, hi)`` spaces heads over [lo, hi)."""

    kind: str
    lo: float
    hi: Optional[float] = None

    @classmethod
    def fixed(cls, value: float) -> "DecayStrategy":
        return cls("fixed", float(value))

    @classmethod
    def linear(cls, lo: float, hi: float) -> "DecayStrategy":
        return cls("linear", float(lo), float(hi))

    @classmethod
    def parse(cls, text: str) -> "DecayStrategy":
        match = _STRATEGY_RE.match(text or "")
        if not match:
            raise ParameterError(f"Cannot parse decay strategy '{text}'; use fixed(v) or linear(lo,hi)")
        kind, first, second = match.groups()
        try:
            if kind == "fixed":
                if second is not None:
                    raise ParameterError(f"fixed() takes one value, got '{text}'")
                return cls.fixed(float(first))
            if second is None:
                raise ParameterError(f"linear() takes two values, got '{text}'")
            return cls.linear(float(first), float(second))
        except ValueError:
            raise ParameterError(f"Decay strategy '{text}' has a non-numeric value") from None

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed({self.lo!r})"
        return f"linear({self.lo!r},{self.hi!r})"


DEFAULT_DECAY = DecayStrategy.linear(0.75, 1.0)

# Strategies compared in the decay-rate ablation
DECAY_STRATEGY_TABLE: Tuple[DecayStrategy, ...] = (
    DecayStrategy.fixed(0.25),
    DecayStrategy.fixed(0.5),
    DecayStrategy.fixed(0.75),
    DecayStrategy.linear(0.5, 1.0),
    DecayStrategy.linear(0.75, 1.0),
)


@dataclass(frozen=True)
class DecaySchedule:
    strategy: DecayStrategy
    rates: Tuple[float, ...]

    @property
    def heads(self) -> int:
        return len(self.rates)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=np.float64)


def sample_decay_rates(strategy: Union[str, DecayStrategy], n_heads: int) -> DecaySchedule:
    """Deterministic per-head rates: constant fill, or ``lo + (hi - lo) * h / n``."""
    if isinstance(strategy, str):
        strategy = DecayStrategy.parse(strategy)
    if n_heads < 1:
        raise ParameterError(f"Need at least one head, got {n_heads}")
    if strategy.kind == "fixed":
        if not 0.0 < strategy.lo <= 1.0:
            raise ParameterError(f"fixed decay rate must lie in (0, 1], got {strategy.lo}")
        rates = (strategy.lo,) * n_heads
    elif strategy.kind == "linear":
        lo, hi = strategy.lo, strategy.hi
        if not (0.0 < lo < hi <= 1.0):
            raise ParameterError(f"linear decay needs 0 < lo < hi <= 1, got lo={lo}, hi={hi}")
        rates = tuple(lo + (hi - lo) * h / n_heads for h in range(n_heads))
    else:
        raise ParameterError(f"Unknown decay strategy '{strategy.kind}'")
    return DecaySchedule(strategy, rates)


# Single-head kernels ---------------------------------------------------------

def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ops.transpose(t, axes)


def _rates_for(beta: Rates, matrix_ndim: int):
    """Scalar rates pass through; per-head rates get trailing singleton axes."""
    rates = np.asarray(beta, dtype=np.float64)
    if rates.ndim == 0:
        return float(rates)
    return rates.reshape(rates.size, *([1] * matrix_ndim))


def _attention_weights(q: Tensor, k: Tensor) -> Tensor:
    if q.shape[-1] != k.shape[-1] or q.shape[:-2] != k.shape[:-2]:
        raise DimensionError(f"Query {q.shape} and key {k.shape} shapes do not match")
    d = q.shape[-1]
    scores = ops.scale(ops.matmul(q, _swap_last(k)), 1.0 / math.sqrt(d))
    return ops.softmax_rows(scores)


def decayed_attention_weights(q: Tensor, k: Tensor, decay: Optional[Tensor] = None) -> Tensor:
    """Softmaxed scores times the decay matrix (no renormalisation)."""
    weights = _attention_weights(q, k)
    if decay is None:
        return weights
    if decay.shape[-2:] != weights.shape[-2:]:
        raise DimensionError(f"Decay matrix {decay.shape} does not match attention weights {weights.shape}")
    return ops.mul(weights, decay)


def _apply(weights: Tensor, v: Tensor) -> Tensor:
    if v.shape[-2] != weights.shape[-1]:
        raise DimensionError(f"Value {v.shape} does not match attention weights {weights.shape}")
    return ops.matmul(weights, v)


def vanilla_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Softmax(Q K^T / sqrt(d)) V over the last two axes; leading axes are batch (heads)."""
    return _apply(_attention_weights(q, k), v)


def gsa_full(q: Tensor, k: Tensor, v: Tensor, g: Tensor, beta: Rates) -> Tensor:
    N = q.shape[-2]
    if g.shape != (N, N):
        raise DimensionError(f"Geometry prior {g.shape} does not match {N} tokens")
    decay = ops.exp_decay(g, _rates_for(beta, 2))
    return _apply(decayed_attention_weights(q, k, decay), v)


def gsa_axial(q: Tensor, k: Tensor, v: Tensor, gx: Optional[Tensor], gy: Optional[Tensor], beta: Rates) -> Tensor:
    """
    Axial geometry attention on ``(..., H, W, d)`` inputs.

    ``gx`` is HW x W and ``gy`` is HW x H (row-major tokens). Passing ``None`` for both
    runs plain axial attention.
    """
    if q.ndim < 3:
        raise DimensionError(f"Axial attention needs (..., H, W, d) inputs, got {q.shape}")
    H, W = q.shape[-3], q.shape[-2]
    if gx is not None and gx.shape != (H * W, W):
        raise DimensionError(f"Horizontal prior {gx.shape} does not match a {H}x{W} grid (expected {(H * W, W)})")
    if gy is not None and gy.shape != (H * W, H):
        raise DimensionError(f"Vertical prior {gy.shape} does not match a {H}x{W} grid (expected {(H * W, H)})")
    rates = _rates_for(beta, 3)

    # Horizontal pass: one W x W attention per row
    decay_x = None if gx is None else ops.exp_decay(ops.reshape(gx, (H, W, W)), rates)
    u = _apply(decayed_attention_weights(q, k, decay_x), v)

    # Vertical pass: one H x H attention per column, over U
    axes = list(range(q.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    qt, kt, ut = ops.transpose(q, axes), ops.transpose(k, axes), ops.transpose(u, axes)
    decay_y = None
    if gy is not None:
        gy_cols = ops.transpose(ops.reshape(gy, (H, W, H)), (1, 0, 2))
        decay_y = ops.exp_decay(gy_cols, rates)
    out = _apply(decayed_attention_weights(qt, kt, decay_y), ut)
    return ops.transpose(out, axes)


# Multi-head layer ------------------------------------------------------------

class AttentionLayerWeights(Module):
    """Projections Wq, Wk, Wv, Wo (C x C, no bias) plus the layer's fusion memory."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mode: str = WIDE,
                 kind: PriorKind = PriorKind.BOTH, fusion_mode: FusionMode = FusionMode.MEMORY,
                 zero_init_out: bool = False):
        if heads < 1 or dim % heads:
            raise DimensionError(f"Channel count {dim} is not divisible by {heads} heads")
        self.mode = mode
        self.heads = heads
        self.wq = parameter(trunc_normal(rng, (dim, dim)), mode)
        self.wk = parameter(trunc_normal(rng, (dim, dim)), mode)
        self.wv = parameter(trunc_normal(rng, (dim, dim)), mode)
        self.wo = parameter(np.zeros((dim, dim)) if zero_init_out else trunc_normal(rng, (dim, dim)), mode)
        self.fusion = FusionMemory(kind, fusion_mode, mode=mode)

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def _split_heads(t: Tensor, heads: int) -> Tensor:
    N, C = t.shape
    return ops.transpose(ops.reshape(t, (N, heads, C // heads)), (1, 0, 2))


def multi_head_gsa(x: Tensor, prior: GeometryPrior, w: AttentionLayerWeights, sched: DecaySchedule,
                   mode: AttentionMode = AttentionMode.FULL) -> Tensor:
    """
    Multi-head geometry attention over ``x`` (HW x C, row-major tokens).

    Head h uses rate ``sched.rates[h]``. A layer whose fusion memory has prior kind
    ``none`` runs plain attention in the same mode.
    """
    N, C = x.shape
    H, W = prior.grid.H, prior.grid.W
    if N != H * W:
        raise DimensionError(f"{N} tokens do not match a {H}x{W} prior grid")
    if C != w.dim:
        raise DimensionError(f"Input has {C} channels, layer expects {w.dim}")
    if sched.heads != w.heads:
        raise DimensionError(f"Decay schedule has {sched.heads} rates for {w.heads} heads")
    mode = AttentionMode(mode)
    with_prior = w.fusion.kind != PriorKind.NONE

    q = _split_heads(ops.matmul(x, w.wq), w.heads)
    k = _split_heads(ops.matmul(x, w.wk), w.heads)
    v = _split_heads(ops.matmul(x, w.wv), w.heads)
    rates = sched.as_array()

    if mode == AttentionMode.FULL:
        if not with_prior:
            out = vanilla_attention(q, k, v)
        elif prior.G is None:
            raise DimensionError("Full attention needs a fused HW x HW prior, but the prior has none")
        else:
            out = gsa_full(q, k, v, prior.G, rates)
    else:
        shape = (w.heads, H, W, w.head_dim)
        q, k, v = ops.reshape(q, shape), ops.reshape(k, shape), ops.reshape(v, shape)
        if with_prior and prior.Gx is None:
            raise DimensionError("Axial attention needs axial priors, but the prior has none")
        gx, gy = (prior.Gx, prior.Gy) if with_prior else (None, None)
        out = ops.reshape(gsa_axial(q, k, v, gx, gy, rates), (w.heads, N, w.head_dim))

    merged = ops.reshape(ops.transpose(out, (1, 0, 2)), (N, C))
    return ops.matmul(merged, w.wo)
