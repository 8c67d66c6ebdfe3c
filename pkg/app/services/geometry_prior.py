"""
Geometry priors built from a depth map.

Tokens are flattened row-major everywhere: token ``p = i * W + j`` sits at row ``i``,
column ``j`` of the H x W patch grid. The priors:

* depth prior ``D[p][q] = |z_p - z_q|`` over pooled, min-max normalised depth;
* spatial prior ``S[p][q] = |i - i'| + |j - j'|`` (Manhattan distance on the grid);
* fused prior ``G``, a nonnegative combination of the two chosen by ``FusionMode``;
* axial priors ``Gx`` (HW x W, same-row slice of G) and ``Gy`` (HW x H, same-column slice),
  computed directly from axial distances so no HW x HW matrix is needed at high resolution.

Decay matrices are ``beta ** G`` with ``beta`` in (0, 1].
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from app.errors import DimensionError, DomainError, ShapeError
from app.kernel import ops
from app.kernel.nn import Module, parameter
from app.kernel.tensor import WIDE, Tensor

logger = logging.getLogger(__name__)

INIT_DEPTH_WEIGHT = 1.0
INIT_SPATIAL_WEIGHT = 0.1

DEPTH_QUANTUM_BITS = 20
_DEPTH_QUANTUM = float(2 ** DEPTH_QUANTUM_BITS)


class PriorKind(str, Enum):
    BOTH = "both"
    DEPTH = "depth"
    SPATIAL = "spatial"
    NONE = "none"


class FusionMode(str, Enum):
    MEMORY = "memory"
    ADDITION = "addition"
    HADAMARD = "hadamard"
    CONV = "conv"


@dataclass(frozen=True)
class DepthGrid:
    """Pooled depth per patch token, normalised to [0, 1]."""

    z: Tensor

    def __post_init__(self):
        if self.z.ndim != 2 or self.z.size < 1:
            raise ShapeError(f"DepthGrid needs a non-empty H x W map, got {self.z.shape}")
        if np.any(self.z.data < 0) or np.any(self.z.data > 1):
            raise DomainError(
                f"DepthGrid values must lie in [0, 1]; got [{self.z.data.min()}, {self.z.data.max()}]"
            )

    @property
    def H(self) -> int:
        return self.z.shape[0]

    @property
    def W(self) -> int:
        return self.z.shape[1]

    @property
    def tokens(self) -> int:
        return self.H * self.W


def normalize_depth(depth) -> np.ndarray:
    """
    Per-image min-max normalisation to [0, 1]; a constant map becomes all zeros.

    The result is snapped to a grid of ``2 ** -DEPTH_QUANTUM_BITS``. For integer depths
    with a range below ``2 ** (DEPTH_QUANTUM_BITS + 1)`` no exact value lies near a rounding
    midpoint, so any increasing affine rescale of the input gives bit-identical output.
    """
    d = np.asarray(depth.data if isinstance(depth, Tensor) else depth, dtype=np.float64)
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        return np.zeros_like(d)
    z = (d - lo) / (hi - lo)
    return np.clip(np.round(z * _DEPTH_QUANTUM) / _DEPTH_QUANTUM, 0.0, 1.0)


def pool_depth_to_grid(depth, patch: int, mode: str = WIDE) -> DepthGrid:
    """Average-pool a normalised h x w depth map into non-overlapping patch x patch cells."""
    depth = depth if isinstance(depth, Tensor) else Tensor(depth, mode=mode)
    h, w = depth.shape
    if patch < 1 or h % patch or w % patch:
        raise ShapeError(f"Depth map {h}x{w} is not divisible by patch {patch}; pad by edge replication first")
    pooled = ops.avg_pool2d(depth.detach(), patch, patch, patch, patch)
    return DepthGrid(Tensor(np.clip(pooled.data, 0.0, 1.0), mode=depth.mode))


def token_coordinates(H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column of every token in row-major order."""
    rows, cols = np.divmod(np.arange(H * W), W)
    return rows, cols


def depth_distance_matrix(grid: DepthGrid) -> Tensor:
    z = grid.z.data.reshape(-1)
    return Tensor(np.abs(z[:, None] - z[None, :]), mode=grid.z.mode)


def spatial_distance_matrix(H: int, W: int, mode: str = WIDE) -> Tensor:
    if H < 1 or W < 1:
        raise ShapeError(f"Grid must be at least 1x1, got {H}x{W}")
    rows, cols = token_coordinates(H, W)
    s = np.abs(rows[:, None] - rows[None, :]) + np.abs(cols[:, None] - cols[None, :])
    return Tensor(s.astype(np.float64), mode=mode)


@dataclass(frozen=True)
class AxialDistances:
    depth_x: Tensor    # HW x W
    spatial_x: Tensor  # HW x W
    depth_y: Tensor    # HW x H
    spatial_y: Tensor  # HW x H


def axial_distances(grid: DepthGrid) -> AxialDistances:
    H, W, mode = grid.H, grid.W, grid.z.mode
    z = grid.z.data
    # dx[i, j, j'] = |z[i, j] - z[i, j']|; dy[i, j, i'] = |z[i, j] - z[i', j]|
    dx = np.abs(z[:, :, None] - z[:, None, :]).reshape(H * W, W)
    dy = np.abs(z[:, :, None] - z.T[None, :, :]).reshape(H * W, H)
    cols = np.arange(W)
    rows = np.arange(H)
    sx = np.tile(np.abs(cols[:, None] - cols[None, :]), (H, 1)).astype(np.float64)
    sy = np.repeat(np.abs(rows[:, None] - rows[None, :]), W, axis=0).astype(np.float64)
    return AxialDistances(Tensor(dx, mode=mode), Tensor(sx, mode=mode), Tensor(dy, mode=mode), Tensor(sy, mode=mode))


class FusionMemory(Module):
    """
    Learnable weights that fuse the depth and spatial priors of one attention layer.

    Stored weights are unconstrained; the memory fusion uses their absolute values so
    the fused prior stays nonnegative. Which weights exist depends on the prior kind
    and fusion mode (addition and Hadamard fusion have none).
    """

    def __init__(self, kind: PriorKind = PriorKind.BOTH, fusion_mode: FusionMode = FusionMode.MEMORY,
                 mode: str = WIDE, w_depth: float = INIT_DEPTH_WEIGHT, w_spatial: float = INIT_SPATIAL_WEIGHT):
        self.mode = mode
        self.kind = PriorKind(kind)
        self.fusion_mode = FusionMode(fusion_mode)
        weighted = self.fusion_mode in (FusionMode.MEMORY, FusionMode.CONV)
        learn_depth = self.kind == PriorKind.DEPTH or (self.kind == PriorKind.BOTH and weighted)
        learn_spatial = self.kind == PriorKind.SPATIAL or (self.kind == PriorKind.BOTH and weighted)
        self.w_depth = parameter([w_depth], mode) if learn_depth else None
        self.w_spatial = parameter([w_spatial], mode) if learn_spatial else None
        conv = self.kind == PriorKind.BOTH and self.fusion_mode == FusionMode.CONV
        self.conv_bias = parameter([0.0], mode) if conv else None

    def effective_weights(self) -> Tuple[float, float]:
        wd = abs(float(self.w_depth.data[0])) if self.w_depth is not None else 0.0
        ws = abs(float(self.w_spatial.data[0])) if self.w_spatial is not None else 0.0
        return wd, ws

    def fuse(self, d: Optional[Tensor], s: Tensor) -> Optional[Tensor]:
        """Fuse matching depth/spatial distance tables; ``None`` when the layer has no prior."""
        if d is not None and d.shape != s.shape:
            raise DimensionError(f"Cannot fuse depth prior {d.shape} with spatial prior {s.shape}")
        if self.kind == PriorKind.NONE:
            return None
        if self.kind == PriorKind.DEPTH:
            return ops.mul(ops.abs(self.w_depth), d)
        if self.kind == PriorKind.SPATIAL:
            return ops.mul(ops.abs(self.w_spatial), s)
        if self.fusion_mode == FusionMode.ADDITION:
            return ops.add(d, s)
        if self.fusion_mode == FusionMode.HADAMARD:
            return ops.mul(d, s)
        if self.fusion_mode == FusionMode.CONV:
            # 1x1 conv over the stacked (D, S) channels; the self pair (S == 0) stays at 0
            mixed = ops.add(ops.add(ops.mul(self.w_depth, d), ops.mul(self.w_spatial, s)), self.conv_bias)
            off_self = ops.constant((s.data > 0).astype(np.float64), mode=s.mode)
            return ops.mul(ops.abs(mixed), off_self)
        return ops.add(ops.mul(ops.abs(self.w_depth), d), ops.mul(ops.abs(self.w_spatial), s))


def fuse_priors(D: Tensor, S: Tensor, mem: FusionMemory) -> Tensor:
    """Fused geometry prior G; a layer without prior yields G = 0."""
    if D.shape != S.shape:
        raise DimensionError(f"Cannot fuse depth prior {D.shape} with spatial prior {S.shape}")
    G = mem.fuse(D, S)
    return G if G is not None else Tensor(np.zeros(S.shape), mode=S.mode)


def axial_priors(grid: DepthGrid, mem: FusionMemory) -> Tuple[Tensor, Tensor]:
    ax = axial_distances(grid)
    gx = mem.fuse(ax.depth_x, ax.spatial_x)
    gy = mem.fuse(ax.depth_y, ax.spatial_y)
    if gx is None:
        gx = Tensor(np.zeros(ax.spatial_x.shape), mode=grid.z.mode)
        gy = Tensor(np.zeros(ax.spatial_y.shape), mode=grid.z.mode)
    return gx, gy


def decay_tensor(G_any: Tensor, beta) -> Tensor:
    """Elementwise ``beta ** G``; the zero diagonal of a full prior maps to exactly 1."""
    return ops.exp_decay(G_any, beta)


@dataclass(frozen=True)
class GeometryPrior:
    """Priors of one resolution after fusion with a layer's memory."""

    grid: DepthGrid
    D: Optional[Tensor] = None
    S: Optional[Tensor] = None
    G: Optional[Tensor] = None
    Gx: Optional[Tensor] = None
    Gy: Optional[Tensor] = None

    @property
    def has_decay(self) -> bool:
        return self.G is not None or self.Gx is not None


@dataclass(frozen=True)
class StagePriorBasis:
    """Raw distances of one stage, computed once and fused per layer."""

    grid: DepthGrid
    D: Optional[Tensor]
    S: Optional[Tensor]
    axial: Optional[AxialDistances]

    @classmethod
    def build(cls, grid: DepthGrid, full: bool = True, axial: bool = True) -> "StagePriorBasis":
        D = depth_distance_matrix(grid) if full else None
        S = spatial_distance_matrix(grid.H, grid.W, mode=grid.z.mode) if full else None
        ax = axial_distances(grid) if axial else None
        logger.debug(f"Prior basis for {grid.H}x{grid.W} grid (full={full}, axial={axial})")
        return cls(grid, D, S, ax)

    def fuse(self, mem: FusionMemory) -> GeometryPrior:
        G = mem.fuse(self.D, self.S) if self.S is not None else None
        gx = gy = None
        if self.axial is not None:
            gx = mem.fuse(self.axial.depth_x, self.axial.spatial_x)
            gy = mem.fuse(self.axial.depth_y, self.axial.spatial_y)
        return GeometryPrior(self.grid, self.D, self.S, G, gx, gy)


def build_geometry_prior(grid: DepthGrid, mem: FusionMemory, full: bool = True, axial: bool = True) -> GeometryPrior:
    return StagePriorBasis.build(grid, full=full, axial=axial).fuse(mem)
