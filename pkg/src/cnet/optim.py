"""Adam optimizer over a named parameter registry."""

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGrad, NonFinite, ShapeMismatch


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_init(params: dict, learning_rate: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps_hat: float = 1e-8) -> AdamState:
    """Zero-moment state matching every parameter shape."""
    state = AdamState(learning_rate, beta1, beta2, eps_hat)
    for name, p in params.items():
        state.first_moment[name] = np.zeros_like(p.data)
        state.second_moment[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes grads afterwards.

    Raises MissingGrad before touching anything if any parameter lacks a
    gradient, and NonFinite if an update would write NaN/Inf into a
    parameter (the parameter is left unmodified in that case).
    """
    for name, p in params.items():
        if p.grad is None:
            raise MissingGrad(f"parameter {name!r} has no gradient")
        if name not in state.first_moment:
            raise ShapeMismatch(f"optimizer state has no moments for {name!r}")
        if state.first_moment[name].shape != p.data.shape:
            raise ShapeMismatch(
                f"moment shape {state.first_moment[name].shape} != "
                f"parameter shape {p.data.shape} for {name!r}"
            )

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    # Python-float corrections so float32 parameters stay float32.
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    lr, eps = state.learning_rate, state.eps_hat

    for name, p in params.items():
        g = p.grad
        m = state.first_moment[name]
        v = state.second_moment[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if not np.all(np.isfinite(new)):
            raise NonFinite(f"update produced NaN/Inf in parameter {name!r} at step {t}")
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data = new

    state.step_count = t
    for p in params.values():
        p.grad[...] = 0
