"""Minimal reverse-mode autodiff and the layers MicroNet is built from."""

from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .functional import (
    BatchNormState,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    log_softmax,
    silu,
    smoothed_cross_entropy,
)
from .optim import sgd_step
from .tensor import (
    ContractError,
    MissingGradError,
    NumericError,
    Parameter,
    StaleGraphError,
    Tensor,
    add,
    backward,
    grad_enabled,
    mul,
    no_grad,
    reshape,
    tensor_sum,
)

__all__ = [
    "BatchNormState",
    "CheckpointError",
    "ContractError",
    "MissingGradError",
    "NumericError",
    "Parameter",
    "StaleGraphError",
    "Tensor",
    "add",
    "backward",
    "batch_norm",
    "conv2d",
    "global_avg_pool",
    "grad_enabled",
    "linear",
    "log_softmax",
    "mul",
    "no_grad",
    "read_checkpoint",
    "reshape",
    "sgd_step",
    "silu",
    "smoothed_cross_entropy",
    "tensor_sum",
    "write_checkpoint",
]
