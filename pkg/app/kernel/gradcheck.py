"""
Central finite-difference oracle for the tape.

The error measure is ``|analytic - numeric| / max(1, |numeric|)``, maximised over
the checked elements.
"""

import logging
from typing import Callable, Iterable, Optional

import numpy as np

from app.kernel.tensor import WIDE, Tensor, Tape, backward

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def _pick_indices(size: int, max_elements: Optional[int], rng: Optional[np.random.Generator]) -> np.ndarray:
    if max_elements is None or max_elements >= size:
        return np.arange(size)
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.sort(rng.choice(size, size=max_elements, replace=False))


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = DEFAULT_EPS,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences."""
    if x.mode != WIDE:
        logger.warning("gradcheck: input is in narrow mode; upcasting to wide float")
    base = np.array(x.data, dtype=np.float64)

    x0 = Tensor(base.copy(), requires_grad=True, mode=WIDE)
    with Tape() as tape:
        out = f(x0)
    backward(out, tape)
    analytic = x0.grad.reshape(-1)

    flat = base.reshape(-1)
    worst = 0.0
    for i in _pick_indices(flat.size, max_elements, rng):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += eps
        minus[i] -= eps
        f_plus = f(Tensor(plus.reshape(base.shape), mode=WIDE)).item()
        f_minus = f(Tensor(minus.reshape(base.shape), mode=WIDE)).item()
        numeric = (f_plus - f_minus) / (2.0 * eps)
        worst = max(worst, _relative_error(float(analytic[i]), numeric))
    return worst


def gradcheck_params(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = DEFAULT_EPS,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Same measure for a closure over module parameters, perturbed in place.

    ``max_elements`` bounds the elements checked per parameter tensor.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = loss_fn()
    backward(out, tape)
    analytic = [p.grad.reshape(-1).copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in _pick_indices(flat.size, max_elements, rng):
            original = flat[i]
            flat[i] = original + eps
            f_plus = loss_fn().item()
            flat[i] = original - eps
            f_minus = loss_fn().item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, _relative_error(float(grad[i]), numeric))
        p.zero_grad()
    return worst
