"""Binary cross-entropy over the two sigmoid output nodes."""

from dataclasses import dataclass

import numpy as np

from .errors import BadLabel, ShapeMismatch
from .tensor import Tensor, emit


@dataclass(frozen=True)
class BCELoss:
    """Clamp constant keeping log arguments strictly inside (0, 1)."""

    epsilon: float = 1e-7


def bce_loss(tape, predictions: Tensor, labels: Tensor, spec: BCELoss = BCELoss()) -> Tensor:
    """Mean over the batch of the summed per-node cross-entropy.

    Predictions are clamped to [epsilon, 1-epsilon] before the logs, so the
    loss is finite for any input in [0, 1].  The gradient is the exact
    derivative of that clamped loss: (p - y) / (p (1 - p)) / batch where the
    raw prediction lies inside (epsilon, 1-epsilon), and exactly 0 outside,
    since the loss is constant in the clamped region.
    """
    if predictions.shape != labels.shape:
        raise ShapeMismatch(
            f"predictions {predictions.shape} vs labels {labels.shape}"
        )
    y = labels.data
    if not np.all((y == 0) | (y == 1)):
        raise BadLabel("labels must be exactly 0 or 1")

    b = predictions.shape[0]
    eps = spec.epsilon
    raw = predictions.data
    p = np.clip(raw, eps, 1.0 - eps)
    inside = (raw > eps) & (raw < 1.0 - eps)
    total = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum()
    out_data = np.asarray([total / b], dtype=predictions.dtype)

    def bwd(g):
        dpred = (p - y) / (p * (1.0 - p)) / b * g[0]
        return np.where(inside, dpred, 0.0), None

    return emit(tape, (predictions, labels), out_data, bwd)
