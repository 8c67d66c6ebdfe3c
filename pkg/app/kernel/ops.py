"""
Differentiable operations over ``Tensor``.

Every op computes its forward value with numpy and registers a closure that maps
the upstream gradient to one gradient per input. Broadcasting is limited to what
the model uses (bias rows, per-head rate columns, scalar weights); gradients of
broadcast operands are summed back to the operand's shape.
"""

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.errors import DataError, DimensionError, DomainError, ParameterError, ShapeError
from app.kernel.tensor import WIDE, Tensor, as_tensor, record_op

Operand = Union[Tensor, float, int, np.ndarray]

LAYER_NORM_EPS = 1e-6
IGNORE_INDEX = 255


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, mode=a.mode)
    if isinstance(b, Tensor):
        return as_tensor(a, mode=b.mode), b
    return as_tensor(a), as_tensor(b)


def constant(data, mode: str = WIDE) -> Tensor:
    return Tensor(data, requires_grad=False, mode=mode)


# Elementwise ---------------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return record_op("add", (a, b), a.data + b.data, backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record_op("sub", (a, b), a.data - b.data, backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return record_op("mul", (a, b), a.data * b.data, backward)


def neg(a: Tensor) -> Tensor:
    return record_op("neg", (a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return record_op("scale", (a,), a.data * factor, lambda g: (g * factor,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(a.data)
    return record_op("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU."""
    c = math.sqrt(2.0 / math.pi)
    x = a.data
    t = np.tanh(c * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dt = (1.0 - t ** 2) * c * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return record_op("gelu", (a,), out, backward)


# Shape ---------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return record_op("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record_op("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record_op("concat", tensors, out, backward)


# Reductions ----------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001
    return record_op("sum", (a,), np.sum(a.data), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return record_op("mean", (a,), np.mean(a.data), backward)


# Linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast (heads, rows)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record_op("matmul", (a, b), out, backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted so large logits cannot overflow."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record_op("softmax_rows", (a,), y, backward)


def exp_decay(g: Tensor, beta) -> Tensor:
    """
    Elementwise ``beta ** g`` evaluated as ``exp(g * ln beta)``.

    ``beta`` is a scalar or an array broadcastable against ``g`` (one rate per head).
    Rates must lie in (0, 1]; exponents must be nonnegative.
    """
    rates = np.asarray(beta, dtype=g.data.dtype)
    if not np.all(np.isfinite(rates)) or np.any(rates <= 0) or np.any(rates > 1):
        raise ParameterError(f"exp_decay: decay rate must lie in (0, 1], got {np.asarray(beta).tolist()}")
    if np.any(g.data < 0):
        raise DomainError(f"exp_decay: exponent has negative entries (min {float(g.data.min())})")
    log_rates = np.log(rates)
    out = np.exp(g.data * log_rates)

    def backward(up):
        return (unbroadcast(up * log_rates * out, g.shape),)

    return record_op("exp_decay", (g,), out, backward)


# Spatial -------------------------------------------------------------------

def avg_pool2d(x: Tensor, kh: int, kw: int, sh: int, sw: int) -> Tensor:
    """Average pooling over the last two axes."""
    if min(kh, kw, sh, sw) < 1:
        raise ParameterError(f"avg_pool2d: kernel/stride must be >= 1, got k=({kh},{kw}) s=({sh},{sw})")
    if x.ndim < 2:
        raise DimensionError(f"avg_pool2d: need at least 2 dims, got {x.shape}")
    H, W = x.shape[-2:]
    lead = x.shape[:-2]
    area = float(kh * kw)

    if kh == sh and kw == sw:
        if H % sh or W % sw:
            raise ShapeError(f"avg_pool2d: {H}x{W} is not divisible by the {kh}x{kw} window; pad first")
        Ho, Wo = H // sh, W // sw
        out = x.data.reshape(*lead, Ho, kh, Wo, kw).mean(axis=(-3, -1))

        def backward(g):
            return (np.repeat(np.repeat(g, kh, axis=-2), kw, axis=-1) / area,)

        return record_op("avg_pool2d", (x,), out, backward)

    if kh > H or kw > W:
        raise ShapeError(f"avg_pool2d: window {kh}x{kw} larger than input {H}x{W}")
    Ho, Wo = (H - kh) // sh + 1, (W - kw) // sw + 1
    out = np.zeros((*lead, Ho, Wo), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            out += x.data[..., di:di + sh * (Ho - 1) + 1:sh, dj:dj + sw * (Wo - 1) + 1:sw]
    out /= area

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for di in range(kh):
            for dj in range(kw):
                gx[..., di:di + sh * (Ho - 1) + 1:sh, dj:dj + sw * (Wo - 1) + 1:sw] += g / area
        return (gx,)

    return record_op("avg_pool2d", (x,), out, backward)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Direct cross-correlation (kernel not flipped) of a C_in x H x W input.

    ``w`` has shape C_out x C_in x k x k; zero padding of ``pad`` on each side.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected CxHxW input and 4-d weight, got {x.shape} and {w.shape}")
    c_in, H, W = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv2d: input {x.shape} has {c_in} channels but weight {w.shape} expects {c_in_w}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    Hp, Wp = xp.shape[1:]
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1

    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, c_in * kh * kw)
    wmat = w.data.reshape(c_out, c_in * kh * kw)
    out = (cols @ wmat.T).T.reshape(c_out, Ho, Wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        gflat = g.reshape(c_out, Ho * Wo)
        gw = (gflat @ cols).reshape(w.shape)
        gcols = (gflat.T @ wmat).reshape(Ho, Wo, c_in, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for di in range(kh):
            for dj in range(kw):
                gxp[:, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride] += (
                    gcols[:, :, :, di, dj].transpose(2, 0, 1)
                )
        gx = gxp[:, pad:pad + H, pad:pad + W]
        if bias is None:
            return gx, gw
        return gx, gw, gflat.sum(axis=1)

    inputs = (x, w) if bias is None else (x, w, bias)
    return record_op("conv2d", inputs, out, backward)


# Normalisation and loss ------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta_shift: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last (channel) axis, then apply the affine gamma/shift."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta_shift.shape != (C,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta_shift.shape} do not match C={C}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta_shift.data

    def backward(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgamma = (g * xhat).reshape(-1, C).sum(axis=0)
        dshift = g.reshape(-1, C).sum(axis=0)
        return dx, dgamma, dshift

    return record_op("layer_norm", (x, gamma, beta_shift), out, backward)


def cross_entropy(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """
    Mean negative log-softmax over the non-ignored rows of an N x K logit matrix.

    When every row is ignored the loss is 0 with a zero gradient.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: expected N x K logits, got {logits.shape}")
    N, K = logits.shape
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if labels.shape[0] != N:
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {N} rows")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= K))
    if np.any(bad):
        raise DataError(f"cross_entropy: label {int(labels[bad][0])} outside [0, {K}) and not {ignore_index}")
    count = int(valid.sum())
    if count == 0:
        return record_op("cross_entropy", (logits,), np.zeros(()), lambda g: (np.zeros(logits.shape),))

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    rows = np.nonzero(valid)[0]
    picked = x[rows, labels[rows]]
    loss = (lse[rows] - picked).sum() / count

    def backward(g):
        p = e / z
        p[rows, labels[rows]] -= 1.0
        p[~valid] = 0.0
        return (g * p / count,)

    return record_op("cross_entropy", (logits,), np.asarray(loss), backward)


# Resampling helpers (constant matrices, used with matmul) ---------------------

def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """
    Row-stochastic n_out x n_in interpolation matrix (half-pixel centres, edge clamp).

    Equal sizes give the identity exactly.
    """
    m = np.zeros((n_out, n_in))
    scale_factor = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale_factor - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    """Source index per output position for nearest-neighbour resampling."""
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of a ... x H x W tensor, expressed as two constant matmuls."""
    H, W = x.shape[-2:]
    if (H, W) == (out_h, out_w):
        return x
    ry = constant(bilinear_matrix(out_h, H), mode=x.mode)
    rx_t = constant(bilinear_matrix(out_w, W).T, mode=x.mode)
    return matmul(matmul(ry, x), rx_t)
