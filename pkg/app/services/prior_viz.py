"""
Geometry-prior heatmaps for one depth map.

Writes the full D, S and G tables plus the decay row of four query tokens (reshaped to
the token grid) as 8-bit PGMs, and a ``summary.txt`` with the unscaled ranges.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from app.errors import ParameterError
from app.kernel.tensor import WIDE, Tensor
from app.services.geometry_prior import (
    FusionMemory,
    build_geometry_prior,
    decay_tensor,
    normalize_depth,
    pool_depth_to_grid,
)
from app.services.netpbm import read_pgm, write_pgm

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.txt"
SCALING_NOTE = "linear min-max scaling: pixel = round(255 * (v - min) / (max - min)); constant map -> 0"


def query_positions(H: int, W: int) -> List[Tuple[int, int]]:
    """The inward quarter points of the four corners."""
    return [(H // 4, W // 4), (H // 4, 3 * W // 4), (3 * H // 4, W // 4), (3 * H // 4, 3 * W // 4)]


def pad_to_multiple(depth: np.ndarray, patch: int) -> np.ndarray:
    h, w = depth.shape
    ph, pw = (-h) % patch, (-w) % patch
    if ph or pw:
        logger.debug(f"Edge-padding depth {h}x{w} by ({ph}, {pw}) to a multiple of {patch}")
        depth = np.pad(depth, ((0, ph), (0, pw)), mode="edge")
    return depth


def to_heatmap(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8), lo, hi
    scaled = np.round(255.0 * (values - lo) / (hi - lo))
    return scaled.astype(np.uint8), lo, hi


@dataclass
class PriorVisualization:
    grid: Tuple[int, int]
    files: List[Path] = field(default_factory=list)
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def summary_text(self, source: str, patch: int, beta: float) -> str:
        lines = [
            f"depth = {source}",
            f"patch = {patch}",
            f"beta = {beta!r}",
            f"grid = {self.grid[0]}x{self.grid[1]}",
            f"scaling = {SCALING_NOTE}",
        ]
        for name, (lo, hi) in self.ranges.items():
            lines.append(f"{name}.min = {lo!r}")
            lines.append(f"{name}.max = {hi!r}")
        return "\n".join(lines) + "\n"


def generate_prior_heatmaps(depth_path, patch: int, beta: float, out_dir) -> PriorVisualization:
    if patch < 1:
        raise ParameterError(f"patch must be >= 1, got {patch}")
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    image = read_pgm(depth_path)
    if image.maxval <= 255:
        logger.warning(f"{depth_path}: 8-bit depth map, expected 16-bit")
    depth = pad_to_multiple(normalize_depth(image.pixels), patch)
    grid = pool_depth_to_grid(Tensor(depth, mode=WIDE), patch)
    prior = build_geometry_prior(grid, FusionMemory(), axial=False)
    decay = decay_tensor(prior.G, beta).data
    H, W = grid.H, grid.W
    logger.info(f"Prior grid {H}x{W} from {image.height}x{image.width} depth (patch {patch})")

    maps = {"D": prior.D.data, "S": prior.S.data, "G": prior.G.data}
    for qi, qj in query_positions(H, W):
        maps[f"decay_q{qi}_{qj}"] = decay[qi * W + qj].reshape(H, W)

    out_dir = Path(out_dir)
    viz = PriorVisualization((H, W))
    for name, values in maps.items():
        pixels, lo, hi = to_heatmap(values)
        comment = f"{name}: {SCALING_NOTE}; min={lo!r} max={hi!r}"
        viz.files.append(write_pgm(out_dir / f"{name}.pgm", pixels, maxval=255, comment=comment))
        viz.ranges[name] = (lo, hi)
    summary = out_dir / SUMMARY_FILE
    summary.write_text(viz.summary_text(Path(depth_path).name, patch, beta))
    viz.files.append(summary)
    return viz
