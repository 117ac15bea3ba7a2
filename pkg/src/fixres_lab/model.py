"""MicroNet: a small width/depth-scalable CNN that accepts any input side.

Layout: stem conv -> ``num_stages`` stages of conv-BN-SiLU blocks (the first
block of each stage has stride 2) -> global average pooling -> linear
classifier. Global pooling makes the logits shape independent of the input
resolution, so one trained network can be evaluated at many test sizes.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .tensor_core import (
    BatchNormState,
    ContractError,
    Parameter,
    Tensor,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    no_grad,
    silu,
)

SCOPES = ("classifier", "classifier+top_block", "all")
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


class ResolutionError(ContractError):
    """Input side outside the range the network supports."""


@dataclass(frozen=True)
class ModelConfig:
    width_mult: float = 1.0
    depth_mult: float = 1.0
    base_channels: int = 8
    num_stages: int = 3
    num_classes: int = 8
    train_res: int = 32
    base_blocks: int = 1
    in_channels: int = 1

    @property
    def min_res(self) -> int:
        # every stage halves the side; keep at least 2x2 before pooling
        return 2 ** (self.num_stages + 1)

    @property
    def max_res(self) -> int:
        return 4 * self.train_res

    @property
    def stem_channels(self) -> int:
        return max(1, round(self.base_channels * self.width_mult))

    def stage_channels(self) -> list[int]:
        return [max(1, round(self.base_channels * 2**i * self.width_mult)) for i in range(self.num_stages)]

    @property
    def blocks_per_stage(self) -> int:
        return max(1, math.ceil(self.depth_mult * self.base_blocks))

    def validate(self) -> None:
        if self.width_mult <= 0 or self.depth_mult <= 0:
            raise ValueError("width_mult and depth_mult must be positive")
        if self.base_channels < 1 or self.base_blocks < 1:
            raise ValueError("base_channels and base_blocks must be positive")
        if self.num_stages < 2:
            raise ValueError(f"num_stages must be at least 2, got {self.num_stages}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.train_res < self.min_res:
            raise ValueError(f"train_res {self.train_res} is below the minimum side {self.min_res}")

    def supports(self, side: int) -> bool:
        return self.min_res <= side <= self.max_res


class ConvBlock:
    def __init__(self, name: str, c_in: int, c_out: int, stride: int, rng: np.random.Generator, dtype):
        std = math.sqrt(2.0 / (c_out * 9))  # fan-out Kaiming
        self.name = name
        self.stride = stride
        self.weight = Parameter(f"{name}.conv.weight", rng.normal(0.0, std, (c_out, c_in, 3, 3)).astype(dtype))
        self.bn = BatchNormState.create(f"{name}.bn", c_out, dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bn.gamma, self.bn.beta]

    def __call__(self, x: Tensor) -> Tensor:
        return silu(batch_norm(conv2d(x, self.weight, None, stride=self.stride, padding=1), self.bn))


class MicroNet:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.blocks: list[ConvBlock] = [ConvBlock("stem", config.in_channels, config.stem_channels, 1, rng, dtype)]
        self.stage_sizes: list[int] = []
        c_prev = config.stem_channels
        for s, c_out in enumerate(config.stage_channels()):
            for b in range(config.blocks_per_stage):
                self.blocks.append(ConvBlock(f"stage{s}.block{b}", c_prev, c_out, 2 if b == 0 else 1, rng, dtype))
                c_prev = c_out
            self.stage_sizes.append(config.blocks_per_stage)
        bound = 1.0 / math.sqrt(c_prev)
        self.classifier_weight = Parameter(
            "classifier.weight", rng.uniform(-bound, bound, (config.num_classes, c_prev)).astype(dtype)
        )
        self.classifier_bias = Parameter("classifier.bias", np.zeros(config.num_classes, dtype=dtype))

    # structure -----------------------------------------------------------
    def parameters(self) -> list[Parameter]:
        params = [p for block in self.blocks for p in block.parameters()]
        return params + [self.classifier_weight, self.classifier_bias]

    def classifier_parameters(self) -> list[Parameter]:
        return [self.classifier_weight, self.classifier_bias]

    @property
    def top_block(self) -> list[ConvBlock]:
        return self.blocks[len(self.blocks) - self.stage_sizes[-1] :]

    def bn_layers(self) -> list[tuple[str, BatchNormState]]:
        return [(f"{b.name}.bn", b.bn) for b in self.blocks]

    def set_bn_mode(self, mode: str) -> None:
        for _, bn in self.bn_layers():
            bn.mode = mode

    def clone(self) -> MicroNet:
        return copy.deepcopy(self)

    # serialisation -------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {p.name: p.data for p in self.parameters()}
        for name, bn in self.bn_layers():
            state[f"{name}.running_mean"] = bn.running_mean
            state[f"{name}.running_var"] = bn.running_var
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, arr in state.items():
            if arr.shape != own[name].shape:
                raise ContractError(f"{name}: checkpoint shape {arr.shape} != model shape {own[name].shape}")
        for p in self.parameters():
            p.data = np.array(state[p.name], dtype=self.dtype)
            p.grad = None
            p.momentum_buffer = None
        for name, bn in self.bn_layers():
            bn.running_mean = np.array(state[f"{name}.running_mean"], dtype=self.dtype)
            bn.running_var = np.array(state[f"{name}.running_var"], dtype=self.dtype)

    # computation ---------------------------------------------------------
    def check_input(self, batch: Tensor) -> None:
        if batch.data.ndim != 4 or batch.shape[1] != self.config.in_channels:
            raise ContractError(f"expected N x {self.config.in_channels} x S x S input, got {batch.shape}")
        side_h, side_w = batch.shape[2:]
        if side_h != side_w:
            raise ContractError(f"input must be square, got {side_h}x{side_w}")
        if not self.config.supports(side_h):
            raise ResolutionError(
                f"input side {side_h} outside the supported range [{self.config.min_res}, {self.config.max_res}]"
            )

    def run_blocks(self, x: Tensor, start: int = 0, stop: int | None = None) -> Tensor:
        for block in self.blocks[start:stop]:
            x = block(x)
        return x

    def head(self, features: Tensor) -> Tensor:
        return linear(global_avg_pool(features), self.classifier_weight, self.classifier_bias)

    def forward(self, batch, mode: str = "eval") -> Tensor:
        batch = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        self.check_input(batch)
        self.set_bn_mode(mode)
        return self.head(self.run_blocks(batch))

    __call__ = forward

    def forward_partial(self, batch: Tensor, frozen_blocks: int, mode: str) -> Tensor:
        """Run the first ``frozen_blocks`` blocks without recording a graph, the rest normally.

        Frozen blocks always normalise with their running statistics. When every
        block is frozen only the classifier enters the graph.
        """
        self.check_input(batch)
        self.set_bn_mode(mode)
        for block in self.blocks[:frozen_blocks]:
            block.bn.mode = "eval"
        all_frozen = frozen_blocks >= len(self.blocks)
        with no_grad():
            x = self.run_blocks(batch, 0, frozen_blocks)
            if all_frozen:
                x = global_avg_pool(x)
        if all_frozen:
            return linear(x.detach(), self.classifier_weight, self.classifier_bias)
        return self.head(self.run_blocks(x.detach(), frozen_blocks))

    def frozen_block_count(self, scope: str) -> int:
        if scope == "classifier":
            return len(self.blocks)
        if scope == "classifier+top_block":
            return len(self.blocks) - len(self.top_block)
        if scope == "all":
            return 0
        raise ContractError(f"unknown fine-tuning scope {scope!r}; expected one of {SCOPES}")


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> MicroNet:
    return MicroNet(config, seed=seed, dtype=dtype)


def forward(model: MicroNet, batch, mode: str = "eval") -> Tensor:
    return model.forward(batch, mode)


def num_params(model) -> int:
    """Scalar parameter count; running statistics are not parameters."""
    return int(sum(p.data.size for p in model.parameters()))


def split_scope(model: MicroNet, scope: str) -> tuple[list[Parameter], list[Parameter]]:
    """Partition parameters into ``(frozen, trainable)`` for a fine-tuning scope."""
    if scope not in SCOPES:
        raise ContractError(f"unknown fine-tuning scope {scope!r}; expected one of {SCOPES}")
    if scope == "all":
        trainable_ids = {id(p) for p in model.parameters()}
    else:
        trainable = model.classifier_parameters()
        if scope == "classifier+top_block":
            trainable = [p for b in model.top_block for p in b.parameters()] + trainable
        trainable_ids = {id(p) for p in trainable}
    params = model.parameters()
    return [p for p in params if id(p) not in trainable_ids], [p for p in params if id(p) in trainable_ids]


def images_to_batch(images: np.ndarray, dtype=np.float32) -> Tensor:
    """``(N, H, W, C)`` uint8 images -> normalised ``(N, C, H, W)`` tensor."""
    x = images.transpose(0, 3, 1, 2).astype(np.float64)
    x = x * (1.0 / (255.0 * PIXEL_STD)) - PIXEL_MEAN / PIXEL_STD
    return Tensor(np.ascontiguousarray(x, dtype=dtype))
