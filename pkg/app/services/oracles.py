"""
Scalar-loop reference implementations.

Deliberately naive: explicit Python loops over plain floats, used to cross-check the
vectorised kernels in the property suites and tests.
"""

import math
from typing import List, Optional, Sequence

import numpy as np


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def softmax_oracle(row: Sequence[float]) -> List[float]:
    top = max(row)
    exps = [math.exp(v - top) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def avg_pool_oracle(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    H, W = x.shape
    Ho, Wo = (H - kh) // sh + 1, (W - kw) // sw + 1
    out = np.zeros((Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            acc = 0.0
            for di in range(kh):
                for dj in range(kw):
                    acc += float(x[i * sh + di, j * sw + dj])
            out[i, j] = acc / (kh * kw)
    return out


def conv2d_oracle(x: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray] = None,
                  stride: int = 1, pad: int = 0) -> np.ndarray:
    c_in, H, W = x.shape
    c_out, _, kh, kw = w.shape
    Ho, Wo = (H + 2 * pad - kh) // stride + 1, (W + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, Ho, Wo))
    for o in range(c_out):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(c_in):
                    for di in range(kh):
                        for dj in range(kw):
                            y, x_ = i * stride + di - pad, j * stride + dj - pad
                            if 0 <= y < H and 0 <= x_ < W:
                                acc += float(x[c, y, x_]) * float(w[o, c, di, dj])
                out[o, i, j] = acc
    return out


def attention_oracle(q: np.ndarray, k: np.ndarray, v: np.ndarray, decay: Optional[np.ndarray] = None) -> np.ndarray:
    """Explicit softmax(q k^T / sqrt(d)), optional elementwise decay, then the weighted sum of v."""
    N, d = q.shape
    out = np.zeros((N, v.shape[1]))
    for i in range(N):
        scores = [sum(float(q[i, t]) * float(k[j, t]) for t in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        weights = softmax_oracle(scores)
        if decay is not None:
            weights = [wt * float(decay[i, j]) for j, wt in enumerate(weights)]
        for c in range(v.shape[1]):
            out[i, c] = sum(weights[j] * float(v[j, c]) for j in range(len(weights)))
    return out


def gsa_full_oracle(q: np.ndarray, k: np.ndarray, v: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
    decay = np.array([[beta ** float(g[i, j]) for j in range(g.shape[1])] for i in range(g.shape[0])])
    return attention_oracle(q, k, v, decay)


def gsa_axial_oracle(q: np.ndarray, k: np.ndarray, v: np.ndarray, gx: Optional[np.ndarray],
                     gy: Optional[np.ndarray], beta: float) -> np.ndarray:
    """Two explicit passes over an (H, W, d) grid: per row with Gx, then per column over U with Gy."""
    H, W, _ = q.shape
    u = np.zeros(v.shape)
    for i in range(H):
        decay = None
        if gx is not None:
            decay = np.array([[beta ** float(gx[i * W + j, jj]) for jj in range(W)] for j in range(W)])
        u[i] = attention_oracle(q[i], k[i], v[i], decay)
    out = np.zeros(v.shape)
    for j in range(W):
        decay = None
        if gy is not None:
            decay = np.array([[beta ** float(gy[i * W + j, ii]) for ii in range(H)] for i in range(H)])
        out[:, j] = attention_oracle(q[:, j], k[:, j], u[:, j], decay)
    return out


def miou_set_oracle(labels: np.ndarray, preds: np.ndarray, num_classes: int, ignore: int = 255):
    """Per-class IoU from explicit pixel sets; classes with an empty union are ``None``."""
    flat_l = [int(v) for v in np.asarray(labels).reshape(-1)]
    flat_p = [int(v) for v in np.asarray(preds).reshape(-1)]
    kept = [(l, p) for l, p in zip(flat_l, flat_p) if l != ignore]
    ious = []
    for c in range(num_classes):
        gt = {i for i, (l, _) in enumerate(kept) if l == c}
        pr = {i for i, (_, p) in enumerate(kept) if p == c}
        union = gt | pr
        ious.append(len(gt & pr) / len(union) if union else None)
    valid = [v for v in ious if v is not None]
    return (sum(valid) / len(valid) if valid else 0.0), ious
