"""
Minimal module system on top of the tape: parameter discovery, state dicts and the
three layer types the model is built from.
"""

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from app.errors import CheckpointError
from app.kernel import ops
from app.kernel.tensor import WIDE, Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall inside +-2 std."""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while np.any(outside):
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


def parameter(data, mode: str) -> Tensor:
    return Tensor(data, requires_grad=True, mode=mode)


class Module:
    """Base class; parameters are discovered from attributes in assignment order."""

    mode: str = WIDE

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, (list, tuple)):
                        for j, sub in enumerate(item):
                            if isinstance(sub, Module):
                                yield from sub.named_parameters(f"{full}.{i}.{j}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = OrderedDict(self.named_parameters())
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise CheckpointError(f"State mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise CheckpointError(f"Tensor '{name}' has shape {value.shape}, model expects {p.shape}")
            p.data = np.ascontiguousarray(value.astype(p.data.dtype))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """y = x W + b with W stored as in_features x out_features."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 mode: str = WIDE, zero_init: bool = False):
        self.mode = mode
        w = np.zeros((in_features, out_features)) if zero_init else trunc_normal(rng, (in_features, out_features))
        self.weight = parameter(w, mode)
        self.bias = parameter(np.zeros(out_features), mode)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, pad: int,
                 rng: np.random.Generator, mode: str = WIDE):
        self.mode = mode
        self.stride = stride
        self.pad = pad
        self.weight = parameter(trunc_normal(rng, (out_channels, in_channels, kernel, kernel)), mode)
        self.bias = parameter(np.zeros(out_channels), mode)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class LayerNorm(Module):
    """Channel-last layer norm with unit gain and zero shift at init."""

    def __init__(self, dim: int, mode: str = WIDE):
        self.mode = mode
        self.gamma = parameter(np.ones(dim), mode)
        self.shift = parameter(np.zeros(dim), mode)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.shift)
