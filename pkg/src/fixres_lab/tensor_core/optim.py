"""Plain-momentum SGD."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import ContractError, MissingGradError, Parameter


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """Apply ``v <- momentum * v + grad + weight_decay * w; w <- w - lr * v`` and clear grads.

    Every parameter must carry a gradient; the check runs before any update so
    a failure leaves all parameters untouched.
    """
    params = list(params)
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ContractError(f"momentum must lie in [0, 1), got {momentum}")
    if weight_decay < 0:
        raise ContractError(f"weight decay must be non-negative, got {weight_decay}")
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise MissingGradError(f"no gradient for parameter(s): {', '.join(missing)}")
    for p in params:
        step = p.grad
        if weight_decay:
            step = step + weight_decay * p.data
        if momentum:
            if p.momentum_buffer is None:
                p.momentum_buffer = np.zeros_like(p.data)
            p.momentum_buffer *= momentum
            p.momentum_buffer += step
            step = p.momentum_buffer
        p.data -= (lr * step).astype(p.dtype, copy=False)
        p.grad = None
