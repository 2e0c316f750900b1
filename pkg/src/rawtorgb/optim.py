"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class GradientNaNError(RuntimeError):
    """Raised when a parameter's gradient contains NaN."""


class AdamState:
    """Per-parameter first/second moment buffers and step counter."""

    __slots__ = ("first_moment", "second_moment", "step_count", "beta1", "beta2", "epsilon")

    def __init__(self, param: Tensor, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.first_moment = np.zeros_like(param.data)
        self.second_moment = np.zeros_like(param.data)
        self.step_count = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(param: Tensor, state: AdamState, lr: float, grad=None) -> None:
    """One bias-corrected Adam update on a single parameter, in place.

    grad defaults to param.grad; a missing gradient counts as zero.
    """
    if lr <= 0:
        raise ValueError(f"adam_step needs lr > 0, got {lr}")
    if grad is None:
        grad = param.grad
    if grad is None:
        grad = np.zeros_like(param.data)
    grad = np.asarray(grad, dtype=param.data.dtype)
    if grad.shape != param.data.shape:
        raise ValueError(
            f"gradient shape {grad.shape} does not match parameter "
            f"{param.name or '<unnamed>'} shape {param.data.shape}"
        )
    if np.isnan(grad).any():
        raise GradientNaNError(f"NaN gradient for parameter {param.name or '<unnamed>'}")

    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grad * grad

    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    param.data -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(param.data.dtype)


class Adam:
    """Adam over a list of parameter tensors.

    Parameters with requires_grad=False (frozen stages) are skipped
    entirely: no state, no update.
    """

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.states = [AdamState(p, beta1, beta2, epsilon) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for p, state in zip(self.params, self.states):
            adam_step(p, state, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
