"""
RGB-D samples: Netpbm IO, synthetic depth-separable scenes and augmentation.

A synthetic scene paints K-1 rectangles (classes 1..K-1) over a background (class 0).
Two classes always share the exact same flat colour but sit in disjoint depth bands,
so only depth can tell them apart.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from app.errors import DataError, NetpbmDimensionError, ParameterError, ShapeError
from app.kernel.ops import bilinear_matrix, nearest_indices
from app.services.geometry_prior import normalize_depth
from app.services.netpbm import read_pgm, read_ppm, write_pgm, write_ppm

logger = logging.getLogger(__name__)

IGNORE_LABEL = 255
SCALE_RANGE = (0.5, 1.75)
FLIP_PROBABILITY = 0.5
DEPTH_NOISE = 20

RGB_FILE = "rgb.ppm"
DEPTH_FILE = "depth.pgm"
LABEL_FILE = "labels.pgm"

# Flat class colours, quantised to 8 bits so written samples read back identically
_PALETTE = np.round(np.array([
    [0.45, 0.42, 0.40],
    [0.80, 0.25, 0.20],
    [0.20, 0.55, 0.80],
    [0.30, 0.70, 0.30],
    [0.85, 0.75, 0.20],
    [0.60, 0.30, 0.70],
    [0.25, 0.75, 0.70],
    [0.90, 0.55, 0.15],
]) * 255) / 255

# Near class far from the background, far class just in front of it
NEAR_BAND = (800, 1200)
FAR_BAND = (5400, 5800)
BACKGROUND_DEPTH = 6000
BACKGROUND_RAMP = 1000


@dataclass(frozen=True)
class RgbdSample:
    """Aligned rgb (3 x h x w, [0, 1]), raw depth (h x w) and labels (h x w)."""

    rgb: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise DataError(f"Sample {self.id}: rgb must be 3 x h x w, got {self.rgb.shape}")
        if self.depth.shape != self.rgb.shape[1:] or self.labels.shape != self.rgb.shape[1:]:
            raise DataError(
                f"Sample {self.id}: rgb {self.rgb.shape[1:]}, depth {self.depth.shape} and "
                f"labels {self.labels.shape} must share spatial dims"
            )

    @property
    def size(self) -> Tuple[int, int]:
        return self.depth.shape

    def check_labels(self, num_classes: int) -> None:
        bad = (self.labels != IGNORE_LABEL) & ((self.labels < 0) | (self.labels >= num_classes))
        if np.any(bad):
            raise DataError(
                f"Sample {self.id}: label {int(self.labels[bad][0])} outside [0, {num_classes}) and not {IGNORE_LABEL}"
            )


# IO --------------------------------------------------------------------------

def read_sample(rgb_path, depth_path, label_path, sample_id: Optional[str] = None) -> RgbdSample:
    """Read a P6 image, a 16-bit P5 depth map and an 8-bit P5 label map."""
    rgb_img = read_ppm(rgb_path)
    depth_img = read_pgm(depth_path)
    label_img = read_pgm(label_path)
    if depth_img.shape != rgb_img.shape:
        raise NetpbmDimensionError(depth_path, f"depth is {depth_img.shape}, rgb {rgb_path} is {rgb_img.shape}")
    if label_img.shape != rgb_img.shape:
        raise NetpbmDimensionError(label_path, f"labels are {label_img.shape}, rgb {rgb_path} is {rgb_img.shape}")
    if depth_img.maxval <= 255:
        raise NetpbmDimensionError(depth_path, f"depth must be 16-bit, maxval is {depth_img.maxval}")
    if label_img.maxval > 255:
        raise NetpbmDimensionError(label_path, f"labels must be 8-bit, maxval is {label_img.maxval}")
    rgb = rgb_img.pixels.astype(np.float64).transpose(2, 0, 1) / rgb_img.maxval
    return RgbdSample(
        rgb=rgb,
        depth=depth_img.pixels.astype(np.float64),
        labels=label_img.pixels.astype(np.int64),
        id=sample_id if sample_id is not None else Path(rgb_path).parent.name,
    )


def write_sample(sample: RgbdSample, directory) -> Tuple[Path, Path, Path]:
    """Write rgb.ppm, depth.pgm (16-bit) and labels.pgm (8-bit) into ``directory``."""
    directory = Path(directory)
    depth = np.asarray(sample.depth)
    if np.any(depth != np.round(depth)) or depth.min() < 0 or depth.max() > 65535:
        raise DataError(f"Sample {sample.id}: depth must be integers in [0, 65535] to store as 16-bit PGM")
    rgb = np.round(np.clip(sample.rgb, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0)
    rgb_path = write_ppm(directory / RGB_FILE, rgb)
    depth_path = write_pgm(directory / DEPTH_FILE, depth.astype(np.uint16), maxval=65535)
    label_path = write_pgm(directory / LABEL_FILE, sample.labels.astype(np.uint8), maxval=255)
    return rgb_path, depth_path, label_path


# Synthetic scenes ------------------------------------------------------------

def class_color(c: int) -> np.ndarray:
    return _PALETTE[c % len(_PALETTE)]


def colliding_pair(num_classes: int) -> Tuple[int, int]:
    """The two classes painted with identical colour."""
    return (1, 2) if num_classes >= 3 else (0, 1)


def _class_depth(c: int, rng: np.random.Generator) -> float:
    # class 1 near, class 2 far; with K == 2 the far side of the pair is the background
    if c == 1:
        return float(rng.integers(*NEAR_BAND, endpoint=True))
    if c == 2:
        return float(rng.integers(*FAR_BAND, endpoint=True))
    return float(rng.integers(1600, 2800, endpoint=True))


def synth_scene(seed: int, h: int, w: int, K: int) -> RgbdSample:
    """Deterministic synthetic RGB-D scene with one rectangle per foreground class."""
    if K < 2:
        raise ParameterError(f"Synthetic scenes need at least 2 classes, got {K}")
    if h % 32 or w % 32:
        raise ShapeError(f"Synthetic scenes need sizes divisible by 32, got {h}x{w}")
    rng = np.random.default_rng(seed)
    pair = colliding_pair(K)

    rows_idx = np.arange(h, dtype=np.float64)[:, None]
    depth = np.broadcast_to(BACKGROUND_DEPTH + BACKGROUND_RAMP * rows_idx / h, (h, w)).copy()
    labels = np.zeros((h, w), dtype=np.int64)
    colors = [class_color(c) for c in range(K)]
    colors[pair[1]] = colors[pair[0]]

    objects = K - 1
    grid_cols = int(np.ceil(np.sqrt(objects)))
    grid_rows = int(np.ceil(objects / grid_cols))
    cell_h, cell_w = h // grid_rows, w // grid_cols
    cells = rng.permutation(grid_rows * grid_cols)[:objects]
    for c, cell in zip(range(1, K), cells):
        ci, cj = divmod(int(cell), grid_cols)
        rh = int(rng.integers(cell_h // 2, 3 * cell_h // 4, endpoint=True))
        rw = int(rng.integers(cell_w // 2, 3 * cell_w // 4, endpoint=True))
        top = ci * cell_h + int(rng.integers(0, cell_h - rh, endpoint=True))
        left = cj * cell_w + int(rng.integers(0, cell_w - rw, endpoint=True))
        labels[top:top + rh, left:left + rw] = c
        depth[top:top + rh, left:left + rw] = _class_depth(c, rng)

    rgb = np.stack([np.asarray(colors)[labels][..., ch] for ch in range(3)])
    noise = rng.integers(-DEPTH_NOISE, DEPTH_NOISE, size=(h, w), endpoint=True)
    depth = np.clip(np.round(depth) + noise, 0, 65535).astype(np.float64)
    return RgbdSample(rgb=rgb, depth=depth, labels=labels, id=f"synth-{seed:06d}")


def ambiguous_class_pairs(sample: RgbdSample, num_classes: int, rgb_tol: float = 1.0 / 255,
                          depth_gap: float = 0.3) -> List[Tuple[int, int]]:
    """Class pairs whose mean colours agree within ``rgb_tol`` but whose normalised mean depths differ by more than ``depth_gap``."""
    z = normalize_depth(sample.depth)
    present = [c for c in range(num_classes) if np.any(sample.labels == c)]
    means = {c: (sample.rgb[:, sample.labels == c].mean(axis=1), z[sample.labels == c].mean()) for c in present}
    pairs = []
    for i, a in enumerate(present):
        for b in present[i + 1:]:
            rgb_diff = np.max(np.abs(means[a][0] - means[b][0]))
            if rgb_diff < rgb_tol and abs(means[a][1] - means[b][1]) > depth_gap:
                pairs.append((a, b))
    return pairs


# Augmentation ----------------------------------------------------------------

def _resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = image.shape[-2:]
    return bilinear_matrix(out_h, h) @ image @ bilinear_matrix(out_w, w).T


def _center_fit(array: np.ndarray, h: int, w: int, pad_value: Optional[int]) -> np.ndarray:
    """Center-crop or pad the last two axes to h x w (edge replication when pad_value is None)."""
    for axis, target in ((-2, h), (-1, w)):
        size = array.shape[axis]
        if size > target:
            start = (size - target) // 2
            array = np.take(array, np.arange(start, start + target), axis=axis)
        elif size < target:
            before = (target - size) // 2
            widths = [(0, 0)] * array.ndim
            widths[axis] = (before, target - size - before)
            if pad_value is None:
                array = np.pad(array, widths, mode="edge")
            else:
                array = np.pad(array, widths, mode="constant", constant_values=pad_value)
    return array


def augment(s: RgbdSample, rng: np.random.Generator, force_flip: Optional[bool] = None,
            scale: Optional[float] = None) -> RgbdSample:
    """
    Random horizontal flip (p = 0.5) and random rescale in [0.5, 1.75], then center
    crop or pad back to the original size. Labels use nearest-neighbour sampling and
    pad with the ignore label; rgb/depth use bilinear sampling and edge padding.
    """
    flip_draw = rng.random()
    scale_draw = rng.uniform(*SCALE_RANGE)
    flip = flip_draw < FLIP_PROBABILITY if force_flip is None else force_flip
    factor = scale_draw if scale is None else float(scale)

    rgb, depth, labels = s.rgb, s.depth, s.labels
    if flip:
        rgb, depth, labels = rgb[..., ::-1], depth[..., ::-1], labels[..., ::-1]
    h, w = s.size
    if factor != 1.0:
        nh, nw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
        rgb = _resize_bilinear(rgb, nh, nw)
        depth = _resize_bilinear(depth, nh, nw)
        labels = labels[nearest_indices(nh, h)][:, nearest_indices(nw, w)]
        rgb = _center_fit(rgb, h, w, None)
        depth = _center_fit(depth, h, w, None)
        labels = _center_fit(labels, h, w, IGNORE_LABEL)
    return RgbdSample(
        rgb=np.ascontiguousarray(rgb),
        depth=np.ascontiguousarray(depth),
        labels=np.ascontiguousarray(labels),
        id=s.id,
    )
