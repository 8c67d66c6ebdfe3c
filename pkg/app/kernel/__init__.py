"""Dense tensor kernel: tensors, the reverse-mode tape, differentiable ops and a gradient oracle."""

from app.kernel.tensor import NARROW, WIDE, Tape, Tensor, backward, dtype_for

__all__ = ["NARROW", "WIDE", "Tape", "Tensor", "backward", "dtype_for"]
