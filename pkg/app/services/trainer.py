"""
Toy training and evaluation on synthetic RGB-D scenes.

AdamW with decoupled weight decay on matrix/conv weights, polynomial learning-rate
decay to zero, per-pixel cross entropy with the ignore label. Each batch element runs
its own tape; gradients add up across the batch and are averaged before the update.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app import settings
from app.errors import ConfigError, TrainingDivergedError
from app.kernel import ops
from app.kernel.tensor import Tape, Tensor, backward
from app.services.backbone import DFormerV2, ModelConfig
from app.services.checkpoint import load_model, save_model
from app.services.data_pipeline import IGNORE_LABEL, RgbdSample, augment
from app.services.loader import build_synthetic_split
from app.services.metrics import ConfusionMatrix, miou, pixel_accuracy

logger = logging.getLogger(__name__)

VAL_SEED_OFFSET = 50_000
SPLIT_SEED_STRIDE = 100_000


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-2
    poly_power: float = 0.9
    image_size: int = 64
    train_samples: int = 200
    val_samples: int = 50
    log_every: int = 10
    augment: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or self.weight_decay < 0 or self.poly_power < 0:
            raise ConfigError(f"lr must be > 0 and weight_decay/poly_power >= 0 (lr={self.lr}, "
                              f"weight_decay={self.weight_decay}, poly_power={self.poly_power})")
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.train_samples < 1 or self.val_samples < 1:
            raise ConfigError("train_samples and val_samples must be >= 1")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "TrainConfig":
        names = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in values.items() if k in names})

    def to_mapping(self) -> Dict[str, Any]:
        return asdict(self)


def poly_lr(base_lr: float, step: int, total: int, power: float) -> float:
    """``base_lr * (1 - step / total) ** power``, reaching 0 at ``total``."""
    if total <= 0:
        return base_lr
    return base_lr * (1.0 - min(step, total) / total) ** power


class AdamW:
    """Adam with weight decay decoupled from the gradient; decay only touches weights with ndim >= 2."""

    def __init__(self, params: List[Tensor], weight_decay: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and p.ndim >= 2:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)


def pixel_loss(model: DFormerV2, sample: RgbdSample) -> Tensor:
    logits = model(sample.rgb, sample.depth)
    K, h, w = logits.shape
    flat = ops.reshape(ops.transpose(logits, (1, 2, 0)), (h * w, K))
    return ops.cross_entropy(flat, sample.labels.reshape(-1), ignore_index=IGNORE_LABEL)


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def train(model: DFormerV2, samples: List[RgbdSample], cfg: TrainConfig, seed: int = 0,
          on_log: Optional[Callable[[int, float, float], None]] = None) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps; raises ``TrainingDivergedError`` on a non-finite loss."""
    batch_rng = np.random.default_rng(seed)
    aug_rng = np.random.default_rng(seed + 1)
    optimizer = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    result = TrainResult()
    start = time.perf_counter()
    for step in range(cfg.steps):
        lr = poly_lr(cfg.lr, step, cfg.steps, cfg.poly_power)
        model.zero_grad()
        batch = batch_rng.integers(0, len(samples), size=cfg.batch_size)
        total = 0.0
        for idx in batch:
            sample = augment(samples[idx], aug_rng) if cfg.augment else samples[idx]
            with Tape() as tape:
                loss = pixel_loss(model, sample)
            backward(loss, tape)
            total += loss.item()
        loss_value = total / cfg.batch_size
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(f"Loss became {loss_value} at step {step}")
        for p in model.parameters():
            if p.grad is not None:
                p.grad = p.grad / cfg.batch_size
        optimizer.step(lr)
        result.losses.append(loss_value)
        if (step + 1) % cfg.log_every == 0 or step + 1 == cfg.steps:
            logger.info(f"step {step + 1}/{cfg.steps} loss {loss_value:.4f} lr {lr:.3e}")
            if on_log is not None:
                on_log(step + 1, loss_value, lr)
    result.seconds = time.perf_counter() - start
    return result


def evaluate(model: DFormerV2, samples: List[RgbdSample], workers: Optional[int] = None) -> ConfusionMatrix:
    """Single-scale evaluation; samples fan out over threads (frozen weights, no tape)."""
    workers = workers or settings.WORKERS
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        preds = list(pool.map(lambda s: model.predict(s.rgb, s.depth), samples))
    cm = ConfusionMatrix(model.config.num_classes)
    for sample, pred in zip(samples, preds):
        cm.add(sample.labels, pred)
    return cm


@dataclass
class ToyRun:
    model_config: ModelConfig
    train_config: TrainConfig
    arm: str
    seed: int
    checkpoint: Path
    result: TrainResult
    confusion: ConfusionMatrix

    @property
    def miou(self) -> float:
        return miou(self.confusion)[0]

    @property
    def per_class_iou(self):
        return miou(self.confusion)[1]

    @property
    def pixel_accuracy(self) -> float:
        return pixel_accuracy(self.confusion)


def split_seeds(seed: int) -> Tuple[int, int]:
    base = seed * SPLIT_SEED_STRIDE
    return base, base + VAL_SEED_OFFSET


def train_toy(model_config: ModelConfig, train_config: TrainConfig, arm: str, seed: int, out_dir,
              on_log: Optional[Callable[[int, float, float], None]] = None) -> ToyRun:
    """
    Generate the synthetic split for ``seed``, train the arm's model, save the
    checkpoint and evaluate the reloaded checkpoint on the validation split.
    """
    config = replace(model_config.for_arm(arm), init_seed=model_config.init_seed + seed)
    size = train_config.image_size
    train_seed, val_seed = split_seeds(seed)
    train_set = build_synthetic_split(train_seed, train_config.train_samples, size, size, config.num_classes)
    val_set = build_synthetic_split(val_seed, train_config.val_samples, size, size, config.num_classes)

    model = DFormerV2(config)
    logger.info(f"Training arm '{arm}' seed {seed}: {model.num_parameters()} parameters, {train_config.steps} steps")
    result = train(model, train_set, train_config, seed=seed, on_log=on_log)

    checkpoint = save_model(Path(out_dir) / "model.dfv2", model)
    reloaded = load_model(checkpoint)
    confusion = evaluate(reloaded, val_set)
    return ToyRun(config, train_config, arm, seed, checkpoint, result, confusion)


@dataclass
class AblationResult:
    """Toy runs of several arms over several seeds, keyed by arm."""

    runs: Dict[str, List[ToyRun]] = field(default_factory=dict)

    @property
    def arms(self) -> List[str]:
        return list(self.runs)

    def mious(self, arm: str) -> List[float]:
        return [run.miou for run in self.runs[arm]]

    def median_miou(self, arm: str) -> float:
        return float(np.median(self.mious(arm)))

    def medians(self) -> Dict[str, float]:
        return {arm: self.median_miou(arm) for arm in self.runs}


def run_ablation(model_config: ModelConfig, train_config: TrainConfig, arms: Sequence[str], seeds: Sequence[int],
                 out_dir, on_run: Optional[Callable[[ToyRun], None]] = None) -> AblationResult:
    """
    Train every arm once per seed with ``train_toy``; each run writes its checkpoint
    under ``out_dir/<arm>_s<seed>``. Arms are checked before any training starts.
    """
    arms, seeds = list(dict.fromkeys(arms)), list(seeds)
    if not arms or not seeds:
        raise ConfigError("An ablation needs at least one arm and one seed")
    for arm in arms:
        model_config.for_arm(arm)
    result = AblationResult({arm: [] for arm in arms})
    for seed in seeds:
        for arm in arms:
            run_dir = Path(out_dir) / f"{arm}_s{seed}"
            run = train_toy(model_config, train_config, arm, seed, run_dir)
            logger.info(f"Ablation arm '{arm}' seed {seed}: mIoU {run.miou:.4f}")
            result.runs[arm].append(run)
            if on_run is not None:
                on_run(run)
    return result
