"""Adam with bias correction, operating on named parameter dicts.

The learning-rate value is supplied per step by the caller (the trainer owns
the warmup + linear-decay schedule); this module only applies the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeError, Tensor


@dataclass
class AdamState:
    """First/second moment estimates for one named parameter set."""

    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def init_adam(params: dict[str, Tensor]) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        state.first_moment[name] = np.zeros(p.shape, dtype=p.data.dtype)
        state.second_moment[name] = np.zeros(p.shape, dtype=p.data.dtype)
    return state


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place, in sorted-name order.

    Parameters with no grad (never touched by the loss) keep moving only by
    their moment history, exactly like a zero gradient.
    """
    if set(state.first_moment) != set(params):
        raise ShapeError(
            "optimizer state does not cover the parameter set: "
            f"{sorted(set(params) ^ set(state.first_moment))}"
        )
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g is None:
            g = np.zeros(p.shape, dtype=p.data.dtype)
        elif g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape} for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
