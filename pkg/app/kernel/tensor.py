"""
Dense tensors and the reverse-mode tape.

A ``Tensor`` wraps a contiguous row-major numpy array. Two numeric modes exist:
``"wide"`` (float64, used by oracles and finite-difference checks) and ``"narrow"``
(float32, allowed for benchmarks and toy training). The mode is fixed at creation
and every op's output inherits the mode of its first input.

Operations record themselves on the tape that is active in the current context
(``with Tape() as tape: ...``). Outside a tape nothing is recorded, which is how
frozen-weight inference stays free of shared mutable state.
"""

import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ParameterError, UsageError

logger = logging.getLogger(__name__)

WIDE = "wide"
NARROW = "narrow"
_DTYPES = {WIDE: np.float64, NARROW: np.float32}

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("dformer_active_tape", default=None)


def dtype_for(mode: str):
    """Return the numpy dtype backing a numeric mode."""
    try:
        return _DTYPES[mode]
    except KeyError:
        raise ParameterError(f"Unknown numeric mode '{mode}' (expected 'wide' or 'narrow')") from None


class Tensor:
    """Dense N-dimensional array with an optional gradient buffer."""

    def __init__(self, data, requires_grad: bool = False, mode: str = WIDE, name: Optional[str] = None):
        self.mode = mode
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype_for(mode)))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, mode=self.mode)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    # Operator sugar; the implementations live in app.kernel.ops
    def __add__(self, other):
        from app.kernel import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from app.kernel import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from app.kernel import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.kernel import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.kernel import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from app.kernel import ops
        return ops.mul(other, self)

    def __neg__(self):
        from app.kernel import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from app.kernel import ops
        return ops.matmul(self, other)

    def __truediv__(self, other):
        from app.kernel import ops
        if isinstance(other, Tensor):
            raise UsageError("Division by a tensor is not supported; divide by a Python scalar")
        return ops.scale(self, 1.0 / float(other))

    def reshape(self, *shape):
        from app.kernel import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from app.kernel import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self):
        from app.kernel import ops
        return ops.sum(self)

    def mean(self):
        from app.kernel import ops
        return ops.mean(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, mode={self.mode}{flag})"


def as_tensor(value, mode: str = WIDE) -> Tensor:
    """Wrap scalars and arrays as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, mode=mode)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn


class Tape:
    """Ordered record of executed ops; single use."""

    def __init__(self):
        self.records: List[TapeRecord] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> None:
        if self.consumed:
            raise UsageError("Tape already consumed by backward(); start a new tape")
        self.records.append(TapeRecord(op, inputs, output, backward_fn))


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def record_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as the output of ``op`` and record it on the active tape when needed."""
    inputs = tuple(inputs)
    mode = inputs[0].mode if inputs else WIDE
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires_grad, mode=mode)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and requires_grad:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Propagate d(loss)/d(leaf) for every requires_grad leaf seen by ``tape``.

    Leaf gradients accumulate additively into ``Tensor.grad``; leaves that the
    loss does not depend on receive zeros. The tape cannot be replayed twice.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise UsageError("Tape already consumed by backward(); start a new tape")
    produced = {id(rec.output) for rec in tape.records}
    if id(loss) not in produced:
        raise UsageError("Loss was not produced under this tape")
    tape.consumed = True

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    leaves: Dict[int, Tensor] = {}
    leaf_grads: Dict[int, np.ndarray] = {}

    for rec in reversed(tape.records):
        upstream = grads.pop(id(rec.output), None)
        if upstream is None:
            continue
        input_grads = rec.backward_fn(upstream)
        for tensor, g in zip(rec.inputs, input_grads):
            if not tensor.requires_grad:
                continue
            key = id(tensor)
            if key not in produced:
                leaves[key] = tensor
                if g is not None:
                    leaf_grads[key] = leaf_grads[key] + g if key in leaf_grads else g
                continue
            if g is None:
                continue
            grads[key] = grads[key] + g if key in grads else g

    # Leaves that took part in the pass but received no signal still get a buffer
    for rec in tape.records:
        for tensor in rec.inputs:
            if tensor.requires_grad and id(tensor) not in produced:
                leaves.setdefault(id(tensor), tensor)

    for key, leaf in leaves.items():
        g = leaf_grads.get(key)
        leaf.accumulate_grad(np.zeros(leaf.shape) if g is None else g)
    logger.debug(f"backward: replayed {len(tape.records)} ops, populated {len(leaves)} leaf gradients")
