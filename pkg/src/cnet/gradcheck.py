"""Finite-difference gradient verification.

The oracle side of every backward rule: compare the tape's analytic
gradient against central differences at 64-bit precision.  This module
never reuses an op's backward code, only repeated forward evaluations.
"""

import numpy as np

from .errors import NonFinite
from .tensor import Tape, Tensor, backward


def _forward_scalar(op, x_data: np.ndarray) -> float:
    out = op(None, Tensor(x_data))
    value = float(out.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise NonFinite("forward evaluation produced a non-finite value")
    return value


def grad_check(op, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``op`` maps (tape, Tensor) -> scalar Tensor and must be deterministic
    across calls (ops with randomness must rebuild their RNG internally).
    The input is promoted to float64; relative error per element is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    tape = Tape()
    out = op(tape, x64)
    if not np.isfinite(out.data).all():
        raise NonFinite("forward evaluation produced a non-finite value")
    backward(out, tape)
    analytic = (
        x64.grad.reshape(-1)
        if x64.grad is not None
        else np.zeros(x64.size, dtype=np.float64)
    )

    base = x64.data.reshape(-1).copy()
    numeric = np.empty_like(base)
    probe = base.copy()
    for i in range(base.size):
        probe[i] = base[i] + step
        f_plus = _forward_scalar(op, probe.reshape(x64.shape))
        probe[i] = base[i] - step
        f_minus = _forward_scalar(op, probe.reshape(x64.shape))
        probe[i] = base[i]
        numeric[i] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
