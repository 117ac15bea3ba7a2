"""Differentiable neural-network primitives used by MicroNet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .tensor import ContractError, NumericError, Parameter, Tensor, make_result

BN_MODES = ("train", "eval", "recalibrate")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW batch with an OIkk kernel (im2col + GEMM)."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ContractError(f"conv2d expects NCHW input and OIkk weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if i != c:
        raise ContractError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if kh != kw:
        raise ContractError(f"conv2d needs a square kernel, got weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ContractError(f"invalid stride={stride} / padding={padding}")
    k = kh
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ContractError(f"kernel of weight {weight.shape} does not fit padded input {x.shape}")
    if bias is not None and bias.shape != (o,):
        raise ContractError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    out_h = (hp - k) // stride + 1
    out_w = (wp - k) // stride + 1

    xd = x.data
    if weight.dtype != xd.dtype:
        xd = xd.astype(weight.dtype)
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(xd)
    cols = kernels.im2col(xp, k, stride, out_h, out_w)
    w2 = weight.data.reshape(o, -1)
    out = np.ascontiguousarray((w2 @ cols).reshape(o, n, out_h, out_w).transpose(1, 0, 2, 3))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.ascontiguousarray(w2.T @ g2)
            gxp = kernels.col2im(dcols, n, c, hp, wp, k, stride, out_h, out_w)
            gx = gxp[:, :, padding : padding + h, padding : padding + w].astype(x.dtype, copy=False)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


@dataclass(eq=False)
class BatchNormState:
    """Affine parameters and running statistics of one batch-norm layer.

    Variances are population variances (divide by the element count) both for
    normalisation and for the running estimates.
    """

    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5
    mode: str = "train"
    _acc: tuple | None = field(default=None, repr=False)

    @classmethod
    def create(cls, name: str, channels: int, dtype=np.float32, momentum=0.1, epsilon=1e-5):
        return cls(
            gamma=Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype)),
            beta=Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype)),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )

    def __post_init__(self):
        if not 0.0 < self.momentum <= 1.0:
            raise ContractError(f"batch-norm momentum must lie in (0, 1], got {self.momentum}")
        if self.epsilon <= 0:
            raise ContractError("batch-norm epsilon must be positive")
        c = self.gamma.shape[0]
        if not (self.beta.shape == self.running_mean.shape == self.running_var.shape == (c,)):
            raise ContractError("batch-norm arrays disagree on the channel count")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def begin_recalibration(self) -> None:
        self._acc = (0, np.zeros(self.channels), np.zeros(self.channels))
        self.mode = "recalibrate"

    def accumulate(self, x: np.ndarray) -> None:
        """Merge a batch into the exact running aggregate (Chan et al. pairwise update)."""
        count, mean, m2 = self._acc
        xb = x.astype(np.float64).transpose(1, 0, 2, 3).reshape(self.channels, -1)
        nb = xb.shape[1]
        mb = xb.mean(axis=1)
        m2b = ((xb - mb[:, None]) ** 2).sum(axis=1)
        total = count + nb
        delta = mb - mean
        mean = mean + delta * (nb / total)
        m2 = m2 + m2b + delta**2 * (count * nb / total)
        self._acc = (total, mean, m2)

    def finish_recalibration(self) -> int:
        """Install the aggregate statistics as running stats; returns the element count."""
        if self._acc is None or self._acc[0] == 0:
            raise ContractError("recalibration saw no activations")
        count, mean, m2 = self._acc
        self.running_mean = mean.astype(self.running_mean.dtype)
        self.running_var = (m2 / count).astype(self.running_var.dtype)
        self._acc = None
        self.mode = "eval"
        return count


def batch_norm(x: Tensor, state: BatchNormState) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != state.channels:
        raise ContractError(f"batch_norm expects NCHW with {state.channels} channels, got {x.shape}")
    if state.mode not in BN_MODES:
        raise ContractError(f"unknown batch-norm mode {state.mode!r}")
    gamma, beta, eps = state.gamma, state.beta, state.epsilon
    xd = x.data
    axes = (0, 2, 3)
    g4 = gamma.data[None, :, None, None]

    if state.mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (xd - state.running_mean[None, :, None, None]) * inv[None, :, None, None]
        out = g4 * xhat + beta.data[None, :, None, None]

        def bw_eval(g):
            gx = g * (gamma.data * inv)[None, :, None, None] if x.requires_grad else None
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return make_result(out.astype(xd.dtype, copy=False), (x, gamma, beta), bw_eval)

    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if m == 0:
        raise ContractError("batch_norm needs a non-empty batch in train/recalibrate mode")
    mean = xd.mean(axis=axes)
    centered = xd - mean[None, :, None, None]
    var = (centered * centered).mean(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    if state.mode == "train":
        mom = state.momentum
        state.running_mean = ((1 - mom) * state.running_mean + mom * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - mom) * state.running_var + mom * var).astype(state.running_var.dtype)
    else:
        state.accumulate(xd)

    def bw_train(g):
        gsum = g.sum(axis=axes)
        gxhat = (g * xhat).sum(axis=axes)
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv / m)[None, :, None, None]
            gx = scale * (m * g - gsum[None, :, None, None] - xhat * gxhat[None, :, None, None])
        return gx, gxhat, gsum

    return make_result(out, (x, gamma, beta), bw_train)


def silu(x: Tensor) -> Tensor:
    """Swish activation ``x * sigmoid(x)``."""
    xd = x.data
    # sigmoid(x) = exp(min(x, 0)) / (1 + exp(-|x|)): no overflow, full relative
    # precision in both tails, and no masked ops (they are slow in numpy)
    d = np.abs(xd)
    np.negative(d, out=d)
    np.exp(d, out=d)
    d += 1.0
    s = np.minimum(xd, 0)
    np.exp(s, out=s)
    s /= d
    out = xd * s

    def bw(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return make_result(out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ContractError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ContractError(f"global_avg_pool needs non-empty spatial dims, got {x.shape}")
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype),)

    return make_result(out, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ContractError(f"linear inner-dimension mismatch: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ContractError(f"linear bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


def log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def smoothed_cross_entropy(logits: Tensor, labels, epsilon: float = 0.0) -> Tensor:
    """Batch mean of cross-entropy against ``(1 - eps) * onehot + eps / K``."""
    if not 0.0 <= epsilon < 1.0:
        raise ContractError(f"label smoothing epsilon must lie in [0, 1), got {epsilon}")
    if logits.data.ndim != 2:
        raise ContractError(f"logits must be N x K, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    logp = log_softmax(logits.data)
    q = np.full_like(logp, epsilon / k)
    q[np.arange(n), labels] += 1.0 - epsilon
    loss = -(q * logp).sum() / n
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} from logits with max |z| = {np.abs(logits.data).max()}")

    def bw(g):
        return ((np.exp(logp) - q) * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), bw)
