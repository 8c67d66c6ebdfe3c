"""
DFormerV2 toy segmentation model.

Layout conventions: images and stage features are C x H x W; inside a stage the
features are kept as row-major tokens (HW x C) so the attention blocks and layer norms
work on the channel axis directly.

The encoder never feeds depth through a learned layer. Depth is normalised once per
image, average-pooled to each stage's token grid and only shapes attention through
the geometry priors.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from app.errors import ConfigError, DimensionError, ShapeError
from app.kernel import ops
from app.kernel.nn import Conv2d, LayerNorm, Linear, Module
from app.kernel.tensor import WIDE, Tensor, dtype_for
from app.services.geo_attention import (
    AttentionLayerWeights,
    AttentionMode,
    DecaySchedule,
    DecayStrategy,
    multi_head_gsa,
    sample_decay_rates,
)
from app.services.geometry_prior import (
    FusionMode,
    PriorKind,
    StagePriorBasis,
    normalize_depth,
    pool_depth_to_grid,
)
from app.services.metrics import argmax_prediction

logger = logging.getLogger(__name__)

NUM_STAGES = 4
STEM_STRIDE = 4
INPUT_MULTIPLE = 32

# Ablation arms, from plain attention up to the decomposed geometry attention:
# arm -> (prior kind, axial decomposition in stages 0-2)
ARMS: Dict[str, Tuple[PriorKind, bool]] = {
    "vanilla": (PriorKind.NONE, False),
    "depth-only": (PriorKind.DEPTH, False),
    "spatial-only": (PriorKind.SPATIAL, False),
    "both": (PriorKind.BOTH, False),
    "both-axial": (PriorKind.BOTH, True),
}


@dataclass
class ModelConfig:
    stage_dims: Tuple[int, ...] = (32, 64, 96, 128)
    stage_depths: Tuple[int, ...] = (2, 2, 4, 2)
    stage_heads: Tuple[int, ...] = (1, 2, 4, 8)
    num_classes: int = 4
    ffn_ratio: float = 4.0
    decay: str = "linear(0.75,1.0)"
    fusion_mode: FusionMode = FusionMode.MEMORY
    prior: PriorKind = PriorKind.BOTH
    decompose: bool = True
    decoder_dim: int = 32
    init_seed: int = 0
    numeric_mode: str = WIDE

    def __post_init__(self):
        self.stage_dims = tuple(int(v) for v in self.stage_dims)
        self.stage_depths = tuple(int(v) for v in self.stage_depths)
        self.stage_heads = tuple(int(v) for v in self.stage_heads)
        try:
            self.fusion_mode = FusionMode(self.fusion_mode)
            self.prior = PriorKind(self.prior)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.validate()

    @classmethod
    def nano(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        values = dict(stage_dims=(8, 16, 24, 32), stage_depths=(1, 1, 1, 1), stage_heads=(1, 2, 2, 4), decoder_dim=8)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ModelConfig":
        """Build from parsed config values; keys that are not model fields are ignored."""
        names = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in values.items() if k in names})

    def to_mapping(self) -> Dict[str, Any]:
        values = asdict(self)
        values["fusion_mode"] = self.fusion_mode.value
        values["prior"] = self.prior.value
        return values

    def validate(self) -> None:
        for name in ("stage_dims", "stage_depths", "stage_heads"):
            values = getattr(self, name)
            if len(values) != NUM_STAGES:
                raise ConfigError(f"{name} needs exactly {NUM_STAGES} entries, got {list(values)}")
            if any(v < 1 for v in values):
                raise ConfigError(f"{name} entries must be >= 1, got {list(values)}")
        for s, (dim, heads) in enumerate(zip(self.stage_dims, self.stage_heads)):
            if dim % heads:
                raise ConfigError(f"Stage {s}: {dim} channels not divisible by {heads} heads")
        if self.stage_dims[0] % 2:
            raise ConfigError(f"stage_dims[0] must be even for the stem's half-width conv, got {self.stage_dims[0]}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.ffn_ratio <= 0:
            raise ConfigError(f"ffn_ratio must be positive, got {self.ffn_ratio}")
        if self.decoder_dim < 1:
            raise ConfigError(f"decoder_dim must be >= 1, got {self.decoder_dim}")
        dtype_for(self.numeric_mode)
        for heads in self.stage_heads:
            sample_decay_rates(self.decay_strategy, heads)

    @property
    def decay_strategy(self) -> DecayStrategy:
        return DecayStrategy.parse(self.decay)

    def stage_modes(self) -> Tuple[AttentionMode, ...]:
        """Stages 0-2 run axial attention when decomposed; the last stage always runs full attention."""
        early = AttentionMode.AXIAL if self.decompose else AttentionMode.FULL
        return (early,) * (NUM_STAGES - 1) + (AttentionMode.FULL,)

    def ffn_hidden(self, dim: int) -> int:
        return max(1, int(round(dim * self.ffn_ratio)))

    def for_arm(self, arm: str) -> "ModelConfig":
        if arm not in ARMS:
            raise ConfigError(f"Unknown arm '{arm}'; choose from {', '.join(ARMS)}")
        kind, decompose = ARMS[arm]
        return replace(self, prior=kind, decompose=decompose)


# Layout helpers --------------------------------------------------------------

def chw_to_tokens(x: Tensor) -> Tensor:
    C, H, W = x.shape
    return ops.reshape(ops.transpose(x, (1, 2, 0)), (H * W, C))


def tokens_to_chw(t: Tensor, H: int, W: int) -> Tensor:
    N, C = t.shape
    if N != H * W:
        raise DimensionError(f"{N} tokens cannot be laid out as {H}x{W}")
    return ops.transpose(ops.reshape(t, (H, W, C)), (2, 0, 1))


# Layers ----------------------------------------------------------------------

class Stem(Module):
    """Two stride-2 3x3 convs (3 -> C0/2 -> C0), each followed by layer norm and GELU."""

    def __init__(self, out_dim: int, rng: np.random.Generator, mode: str = WIDE):
        self.mode = mode
        mid = out_dim // 2
        self.conv1 = Conv2d(3, mid, 3, 2, 1, rng, mode)
        self.norm1 = LayerNorm(mid, mode)
        self.conv2 = Conv2d(mid, out_dim, 3, 2, 1, rng, mode)
        self.norm2 = LayerNorm(out_dim, mode)

    def _norm_act(self, x: Tensor, norm: LayerNorm) -> Tensor:
        y = ops.gelu(norm(ops.transpose(x, (1, 2, 0))))
        return ops.transpose(y, (2, 0, 1))

    def forward(self, rgb: Tensor) -> Tensor:
        if rgb.ndim != 3 or rgb.shape[0] != 3:
            raise DimensionError(f"Stem expects a 3 x h x w image, got {rgb.shape}")
        h, w = rgb.shape[1:]
        if h % STEM_STRIDE or w % STEM_STRIDE:
            raise ShapeError(f"Stem input {h}x{w} is not divisible by {STEM_STRIDE}")
        x = self._norm_act(self.conv1(rgb), self.norm1)
        return self._norm_act(self.conv2(x), self.norm2)


class GSABlock(Module):
    """Pre-norm residual geometry attention followed by a pre-norm residual GELU feed-forward."""

    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator, mode: str = WIDE,
                 kind: PriorKind = PriorKind.BOTH, fusion_mode: FusionMode = FusionMode.MEMORY,
                 zero_init: bool = False):
        self.mode = mode
        self.norm1 = LayerNorm(dim, mode)
        self.attn = AttentionLayerWeights(dim, heads, rng, mode, kind, fusion_mode, zero_init_out=zero_init)
        self.norm2 = LayerNorm(dim, mode)
        self.ffn_up = Linear(dim, hidden, rng, mode)
        self.ffn_down = Linear(hidden, dim, rng, mode, zero_init=zero_init)

    def forward(self, x: Tensor, basis: StagePriorBasis, sched: DecaySchedule, mode: AttentionMode) -> Tensor:
        prior = basis.fuse(self.attn.fusion)
        x = ops.add(x, multi_head_gsa(self.norm1(x), prior, self.attn, sched, mode))
        return ops.add(x, self.ffn_down(ops.gelu(self.ffn_up(self.norm2(x)))))


def gsa_block(x: Tensor, basis: StagePriorBasis, block: GSABlock, sched: DecaySchedule,
              mode: AttentionMode = AttentionMode.FULL) -> Tensor:
    return block(x, basis, sched, mode)


class Downsample(Module):
    """Stride-2 3x3 conv between stages, then layer norm."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, mode: str = WIDE):
        self.mode = mode
        self.conv = Conv2d(in_dim, out_dim, 3, 2, 1, rng, mode)
        self.norm = LayerNorm(out_dim, mode)

    def forward(self, tokens: Tensor, H: int, W: int) -> Tensor:
        y = self.conv(tokens_to_chw(tokens, H, W))
        return self.norm(chw_to_tokens(y))


@dataclass
class StageFeatures:
    """Encoder outputs at 1/4, 1/8, 1/16 and 1/32 of the input, each C x H x W."""

    features: List[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, stage: int) -> Tensor:
        return self.features[stage]

    @property
    def grids(self) -> List[Tuple[int, int]]:
        return [tuple(f.shape[1:]) for f in self.features]


class Encoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, zero_init: bool = False):
        self.mode = config.numeric_mode
        self.config = config
        self.stem = Stem(config.stage_dims[0], rng, self.mode)
        self.stages = [
            [
                GSABlock(dim, heads, config.ffn_hidden(dim), rng, self.mode, config.prior, config.fusion_mode,
                         zero_init=zero_init)
                for _ in range(depth)
            ]
            for dim, depth, heads in zip(config.stage_dims, config.stage_depths, config.stage_heads)
        ]
        self.downsamples = [
            Downsample(config.stage_dims[s], config.stage_dims[s + 1], rng, self.mode)
            for s in range(NUM_STAGES - 1)
        ]
        self.schedules = [sample_decay_rates(config.decay_strategy, heads) for heads in config.stage_heads]

    def stage_basis(self, z: Tensor, stage: int, H: int, W: int) -> StagePriorBasis:
        grid = pool_depth_to_grid(z, STEM_STRIDE * 2 ** stage, mode=self.mode)
        if (grid.H, grid.W) != (H, W):
            raise ShapeError(f"Stage {stage}: depth grid {grid.H}x{grid.W} does not match features {H}x{W}")
        mode = self.config.stage_modes()[stage]
        uses_prior = self.config.prior != PriorKind.NONE
        return StagePriorBasis.build(
            grid,
            full=uses_prior and mode == AttentionMode.FULL,
            axial=uses_prior and mode == AttentionMode.AXIAL,
        )

    def forward(self, rgb: Tensor, depth) -> StageFeatures:
        h, w = rgb.shape[-2:]
        depth_shape = tuple(np.shape(depth.data if isinstance(depth, Tensor) else depth))
        if depth_shape != (h, w):
            raise ShapeError(f"Depth map {depth_shape} does not match image {h}x{w}")
        if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
            raise ShapeError(f"Input {h}x{w} is not divisible by {INPUT_MULTIPLE}")
        z = Tensor(normalize_depth(depth), mode=self.mode)

        x = chw_to_tokens(self.stem(rgb))
        H, W = h // STEM_STRIDE, w // STEM_STRIDE
        feats = StageFeatures()
        modes = self.config.stage_modes()
        for s in range(NUM_STAGES):
            if s > 0:
                x = self.downsamples[s - 1](x, H, W)
                H, W = H // 2, W // 2
            basis = self.stage_basis(z, s, H, W)
            for block in self.stages[s]:
                x = block(x, basis, self.schedules[s], modes[s])
            feats.features.append(tokens_to_chw(x, H, W))
            logger.debug(f"Stage {s}: {H}x{W} tokens, {self.config.stage_dims[s]} channels, {modes[s].value}")
        return feats


class Decoder(Module):
    """
    Lightweight head over stages 1-3: per-stage linear projection to ``decoder_dim``,
    bilinear upsampling to the 1/8 grid, concatenation, linear fusion with GELU,
    per-position classifier and bilinear upsampling to the input size.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.mode = config.numeric_mode
        dd = config.decoder_dim
        self.projections = [Linear(config.stage_dims[s], dd, rng, self.mode) for s in range(1, NUM_STAGES)]
        self.fuse = Linear(3 * dd, dd, rng, self.mode)
        self.classifier = Linear(dd, config.num_classes, rng, self.mode)

    def forward(self, feats: StageFeatures, out_h: int, out_w: int) -> Tensor:
        H1, W1 = feats.grids[1]
        upsampled = []
        for proj, feat in zip(self.projections, feats.features[1:]):
            _, H, W = feat.shape
            y = tokens_to_chw(proj(chw_to_tokens(feat)), H, W)
            upsampled.append(ops.resize_bilinear(y, H1, W1))
        fused = ops.gelu(self.fuse(chw_to_tokens(ops.concat(upsampled, axis=0))))
        logits = tokens_to_chw(self.classifier(fused), H1, W1)
        return ops.resize_bilinear(logits, out_h, out_w)


def decoder_forward(decoder: Decoder, feats: StageFeatures, out_h: int, out_w: int) -> Tensor:
    """Class logits at the requested output size from the encoder features."""
    return decoder(feats, out_h, out_w)


class DFormerV2(Module):
    def __init__(self, config: ModelConfig, zero_init: bool = False):
        self.mode = config.numeric_mode
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        self.encoder = Encoder(config, rng, zero_init=zero_init)
        self.decoder = Decoder(config, rng)

    def _as_input(self, rgb) -> Tensor:
        return rgb if isinstance(rgb, Tensor) else Tensor(rgb, mode=self.mode)

    def forward(self, rgb, depth) -> Tensor:
        """Class logits, num_classes x h x w."""
        rgb = self._as_input(rgb)
        feats = self.encoder(rgb, depth)
        return decoder_forward(self.decoder, feats, *rgb.shape[1:])

    def predict(self, rgb, depth) -> np.ndarray:
        """Per-pixel argmax; ties go to the lowest class index."""
        logits = self.forward(rgb, depth)
        return argmax_prediction(logits.data)


# Accounting ------------------------------------------------------------------

@dataclass
class ParamReport:
    items: List[Tuple[str, int]] = field(default_factory=list)

    def add(self, name: str, count: int) -> None:
        self.items.append((name, int(count)))

    @property
    def total(self) -> int:
        return sum(count for _, count in self.items)


def _fusion_params(config: ModelConfig) -> int:
    if config.prior == PriorKind.NONE:
        return 0
    if config.prior in (PriorKind.DEPTH, PriorKind.SPATIAL):
        return 1
    return {FusionMode.MEMORY: 2, FusionMode.CONV: 3}.get(config.fusion_mode, 0)


def count_params(config: ModelConfig) -> ParamReport:
    """Closed-form learnable-scalar count, itemised per module."""
    report = ParamReport()
    c0 = config.stage_dims[0]
    mid = c0 // 2
    report.add("stem", 27 * mid + mid + 2 * mid + 9 * mid * c0 + c0 + 2 * c0)
    fusion = _fusion_params(config)
    for s, (dim, depth) in enumerate(zip(config.stage_dims, config.stage_depths)):
        hidden = config.ffn_hidden(dim)
        attn = 4 * dim * dim + fusion
        ffn = dim * hidden + hidden + hidden * dim + dim
        norms = 4 * dim
        report.add(f"stage{s}.blocks", depth * (attn + ffn + norms))
        if s < NUM_STAGES - 1:
            nxt = config.stage_dims[s + 1]
            report.add(f"stage{s}.downsample", 9 * dim * nxt + nxt + 2 * nxt)
    dd, k = config.decoder_dim, config.num_classes
    report.add("decoder", sum(c * dd + dd for c in config.stage_dims[1:]) + 3 * dd * dd + dd + dd * k + k)
    return report


def attention_flops(H: int, W: int, dim: int, mode: AttentionMode) -> int:
    """Score plus apply FLOPs of one attention layer on an H x W grid (all heads)."""
    n = H * W
    span = n if AttentionMode(mode) == AttentionMode.FULL else H + W
    return 2 * (2 * n * span * dim)


@dataclass
class FlopReport:
    entries: List[Tuple[str, int]] = field(default_factory=list)
    stage_grids: List[Tuple[int, int]] = field(default_factory=list)
    stage_dims: List[int] = field(default_factory=list)

    def add(self, name: str, flops: int) -> None:
        self.entries.append((name, int(flops)))

    @property
    def total(self) -> int:
        return sum(f for _, f in self.entries)

    @property
    def attention_total(self) -> int:
        return sum(f for name, f in self.entries if name.endswith(".attention"))

    def attention_ratio(self, stage: int) -> float:
        """Axial over full attention FLOPs for one layer of ``stage``; equals (H + W) / (HW)."""
        H, W = self.stage_grids[stage]
        dim = self.stage_dims[stage]
        return attention_flops(H, W, dim, AttentionMode.AXIAL) / attention_flops(H, W, dim, AttentionMode.FULL)


def estimate_flops(config: ModelConfig, h: int, w: int, mode: Optional[AttentionMode] = None) -> FlopReport:
    """
    Analytic FLOPs (2 x multiply-accumulates) of convs, projections and attention products.

    ``mode`` forces stages 0-2 to full or axial attention; by default the configured
    stage modes are used. Norms, softmax and resampling are not counted.
    """
    if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
        raise ShapeError(f"Input {h}x{w} is not divisible by {INPUT_MULTIPLE}")
    modes = list(config.stage_modes())
    if mode is not None:
        modes[:NUM_STAGES - 1] = [AttentionMode(mode)] * (NUM_STAGES - 1)

    report = FlopReport()
    c0 = config.stage_dims[0]
    mid = c0 // 2
    report.add("stem.conv1", 2 * 3 * 9 * mid * (h // 2) * (w // 2))
    report.add("stem.conv2", 2 * mid * 9 * c0 * (h // 4) * (w // 4))
    H, W = h // STEM_STRIDE, w // STEM_STRIDE
    for s, (dim, depth) in enumerate(zip(config.stage_dims, config.stage_depths)):
        if s > 0:
            prev = config.stage_dims[s - 1]
            H, W = H // 2, W // 2
            report.add(f"stage{s - 1}.downsample", 2 * prev * 9 * dim * H * W)
        n = H * W
        hidden = config.ffn_hidden(dim)
        report.stage_grids.append((H, W))
        report.stage_dims.append(dim)
        for b in range(depth):
            name = f"stage{s}.block{b}"
            report.add(f"{name}.qkv", 2 * n * dim * 3 * dim)
            report.add(f"{name}.attention", attention_flops(H, W, dim, modes[s]))
            report.add(f"{name}.out_proj", 2 * n * dim * dim)
            report.add(f"{name}.ffn", 2 * 2 * n * dim * hidden)
    dd, k = config.decoder_dim, config.num_classes
    H1, W1 = report.stage_grids[1]
    for s in range(1, NUM_STAGES):
        Hs, Ws = report.stage_grids[s]
        report.add(f"decoder.proj{s}", 2 * Hs * Ws * config.stage_dims[s] * dd)
    report.add("decoder.fuse", 2 * H1 * W1 * 3 * dd * dd)
    report.add("decoder.classifier", 2 * H1 * W1 * dd * k)
    return report
