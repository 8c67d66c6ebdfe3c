"""Single-layer attention benchmark: analytic FLOPs next to measured median wall time."""

import logging
import re
import statistics
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.errors import ParameterError
from app.kernel.tensor import NARROW, Tensor
from app.services.backbone import attention_flops
from app.services.geo_attention import (
    DEFAULT_DECAY,
    AttentionLayerWeights,
    AttentionMode,
    multi_head_gsa,
    sample_decay_rates,
)
from app.services.geometry_prior import DepthGrid, StagePriorBasis

logger = logging.getLogger(__name__)

BENCH_SEED = 0
_GRID_RE = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


def parse_grid(text: str) -> Tuple[int, int]:
    match = _GRID_RE.match(text)
    if not match:
        raise ParameterError(f"Grid must look like HxW, got '{text}'")
    H, W = int(match.group(1)), int(match.group(2))
    if H < 2 or W < 2:
        raise ParameterError(f"Grid dimensions must be >= 2, got {H}x{W}")
    return H, W


def layer_flops(H: int, W: int, dim: int, mode: AttentionMode) -> int:
    """Q/K/V and output projections plus the attention products of one layer."""
    n = H * W
    return 2 * n * dim * 3 * dim + attention_flops(H, W, dim, mode) + 2 * n * dim * dim


@dataclass
class BenchRow:
    mode: AttentionMode
    attention_flops: int
    layer_flops: int
    median_seconds: float
    repeats: int


@dataclass
class BenchReport:
    grid: Tuple[int, int]
    dim: int
    heads: int
    numeric_mode: str
    rows: List[BenchRow]

    def row(self, mode: AttentionMode) -> Optional[BenchRow]:
        return next((r for r in self.rows if r.mode == mode), None)

    @property
    def flop_ratio(self) -> Optional[float]:
        """Axial over full attention FLOPs, (H + W) / (HW)."""
        full, axial = self.row(AttentionMode.FULL), self.row(AttentionMode.AXIAL)
        if full is None or axial is None:
            return None
        return axial.attention_flops / full.attention_flops

    @property
    def time_ratio(self) -> Optional[float]:
        full, axial = self.row(AttentionMode.FULL), self.row(AttentionMode.AXIAL)
        if full is None or axial is None or full.median_seconds == 0:
            return None
        return axial.median_seconds / full.median_seconds


def _time_layer(x: Tensor, basis: StagePriorBasis, w: AttentionLayerWeights, mode: AttentionMode,
                repeat: int) -> float:
    sched = sample_decay_rates(DEFAULT_DECAY, w.heads)
    prior = basis.fuse(w.fusion)
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        multi_head_gsa(x, prior, w, sched, mode)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def run_bench(H: int, W: int, dim: int, heads: int, modes: List[AttentionMode], repeat: int = 5,
              numeric_mode: str = NARROW) -> BenchReport:
    if H < 2 or W < 2:
        raise ParameterError(f"Grid dimensions must be >= 2, got {H}x{W}")
    if repeat < 1:
        raise ParameterError(f"repeat must be >= 1, got {repeat}")
    rng = np.random.default_rng(BENCH_SEED)
    w = AttentionLayerWeights(dim, heads, rng, mode=numeric_mode)
    x = Tensor(rng.normal(size=(H * W, dim)), mode=numeric_mode)
    grid = DepthGrid(Tensor(rng.random((H, W)), mode=numeric_mode))

    rows = []
    for mode in modes:
        basis = StagePriorBasis.build(grid, full=mode == AttentionMode.FULL, axial=mode == AttentionMode.AXIAL)
        # warm-up run outside the timed repeats
        multi_head_gsa(x, basis.fuse(w.fusion), w, sample_decay_rates(DEFAULT_DECAY, heads), mode)
        seconds = _time_layer(x, basis, w, mode, repeat)
        logger.info(f"bench {mode.value} {H}x{W} C={dim}: median {seconds * 1e3:.2f} ms over {repeat}")
        rows.append(BenchRow(mode, attention_flops(H, W, dim, mode), layer_flops(H, W, dim, mode), seconds, repeat))
    return BenchReport((H, W), dim, heads, numeric_mode, rows)
