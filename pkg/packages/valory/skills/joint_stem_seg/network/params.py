# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""This module contains the named parameters of the network and their initialization."""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from packages.valory.skills.joint_stem_seg.autodiff.functional import BatchNormState
from packages.valory.skills.joint_stem_seg.autodiff.tensor import Tensor
from packages.valory.skills.joint_stem_seg.models import (
    PLANT_HEAD,
    DenseBlockConfig,
    NetworkConfig,
)

ENCODER = "encoder"
BOTTOM = "bottom"
KERNEL = "kernel"
BIAS = "bias"
GAMMA = "gamma"
BETA = "beta"
UPSAMPLE_FACTOR = 2
DOWNSAMPLE_KERNEL = 5
DENSE_KERNEL = 3

Shape = Tuple[int, ...]


@dataclass
class ParameterLayout:
    """Names and shapes of every tensor a network configuration owns, in a fixed order."""

    shapes: "OrderedDict[str, Shape]" = field(default_factory=OrderedDict)
    batch_norms: "OrderedDict[str, int]" = field(default_factory=OrderedDict)

    def conv_layer(self, name: str, in_channels: int, out_channels: int, size: int) -> int:
        """Register a conv -> leaky-ReLU -> batch-norm -> dropout layer."""
        self.shapes[f"{name}.{KERNEL}"] = (out_channels, in_channels, size, size)
        self.shapes[f"{name}.{BIAS}"] = (out_channels,)
        self.shapes[f"{name}.{GAMMA}"] = (out_channels,)
        self.shapes[f"{name}.{BETA}"] = (out_channels,)
        self.batch_norms[name] = out_channels
        return out_channels

    def dense_block(self, name: str, in_channels: int, block: DenseBlockConfig) -> int:
        """Register the N bottleneck + 3x3 layer pairs of a dense block."""
        for index in range(block.num_layers):
            layer_in = in_channels + index * block.growth_rate
            self.conv_layer(f"{name}.{index}.bottleneck", layer_in, block.width, 1)
            self.conv_layer(
                f"{name}.{index}.conv", block.width, block.growth_rate, DENSE_KERNEL
            )
        return block.output_channels

    @property
    def size(self) -> int:
        """The number of learnable values."""
        return int(sum(np.prod(shape) for shape in self.shapes.values()))


def parameter_layout(cfg: NetworkConfig) -> ParameterLayout:
    """Derive the parameter names and shapes from the network configuration.

    The key set is a pure function of the configuration. Encoder level `l`
    owns `encoder.l.dense`, `encoder.l.compress` and `encoder.l.down`; the
    bottom stage owns `encoder.bottom.*`; each head owns one upsampling kernel
    and one dense block per level plus a 1x1 classifier.
    """
    layout = ParameterLayout()
    channels = cfg.input_channels
    skip_channels: List[int] = []
    for level in range(cfg.levels):
        block = cfg.block(level)
        grown = layout.dense_block(f"{ENCODER}.{level}.dense", channels, block)
        skip = layout.conv_layer(
            f"{ENCODER}.{level}.compress", channels + grown, block.width, 1
        )
        skip_channels.append(skip)
        channels = layout.conv_layer(
            f"{ENCODER}.{level}.down", skip, skip, DOWNSAMPLE_KERNEL
        )
    bottom = cfg.block(cfg.levels)
    grown = layout.dense_block(f"{ENCODER}.{BOTTOM}.dense", channels, bottom)
    code_channels = layout.conv_layer(
        f"{ENCODER}.{BOTTOM}.compress", channels + grown, bottom.width, 1
    )

    for head in cfg.heads:
        channels = code_channels
        for level in reversed(range(cfg.levels)):
            layout.shapes[f"{head}.{level}.up.{KERNEL}"] = (
                channels,
                channels,
                UPSAMPLE_FACTOR,
                UPSAMPLE_FACTOR,
            )
            channels = layout.dense_block(
                f"{head}.{level}.dense", channels + skip_channels[level], cfg.block(level)
            )
        classes = cfg.plant_classes if head == PLANT_HEAD else cfg.stem_classes
        layout.shapes[f"{head}.classifier.{KERNEL}"] = (classes, channels, 1, 1)
        layout.shapes[f"{head}.classifier.{BIAS}"] = (classes,)
    return layout


@dataclass
class ModelParams:
    """Every learnable tensor keyed by its hierarchical name, plus batch-norm running statistics."""

    config: NetworkConfig
    tensors: "OrderedDict[str, Tensor]"
    bn_states: "OrderedDict[str, BatchNormState]"

    def __getitem__(self, name: str) -> Tensor:
        """Return the tensor of a name."""
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        """Iterate over (name, tensor) pairs in layout order."""
        return iter(self.tensors.items())

    @property
    def dtype(self) -> np.dtype:
        """The precision of the parameters."""
        return next(iter(self.tensors.values())).dtype

    def names(self, prefix: str = "") -> List[str]:
        """Return the names starting with `prefix`."""
        return [name for name in self.tensors if name.startswith(prefix)]

    def zero_grad(self) -> None:
        """Forget every accumulated gradient."""
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def copy(self) -> "ModelParams":
        """Return an independent deep copy."""
        return ModelParams(
            config=self.config,
            tensors=OrderedDict(
                (name, Tensor(tensor.data, requires_grad=tensor.requires_grad))
                for name, tensor in self.tensors.items()
            ),
            bn_states=OrderedDict(
                (name, state.copy()) for name, state in self.bn_states.items()
            ),
        )

    def astype(self, dtype: np.dtype) -> "ModelParams":
        """Return a copy at another precision."""
        return ModelParams(
            config=self.config,
            tensors=OrderedDict(
                (name, Tensor(tensor.data, requires_grad=tensor.requires_grad, dtype=dtype))
                for name, tensor in self.tensors.items()
            ),
            bn_states=OrderedDict(
                (
                    name,
                    BatchNormState(
                        state.running_mean.astype(dtype),
                        state.running_var.astype(dtype),
                        state.num_batches_tracked,
                    ),
                )
                for name, state in self.bn_states.items()
            ),
        )


def he_normal(
    shape: Shape, fan_in: int, rng: np.random.Generator, dtype: np.dtype = np.float32
) -> np.ndarray:
    """Draw from normal(0, sqrt(2 / fan_in))."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def fan_in(name: str, shape: Shape) -> int:
    """The number of inputs feeding one output value of a kernel."""
    if ".up." in name:
        # non-overlapping upsampling: each output value reads one pixel of every input channel
        return shape[0]
    return int(np.prod(shape[1:]))


def he_init(
    cfg: NetworkConfig,
    rng: np.random.Generator,
    dtype: Optional[np.dtype] = None,
) -> ModelParams:
    """Initialize fresh parameters: He-normal kernels, zero biases, unit gamma, zero beta.

    Kernels are drawn in layout order so the same seed yields identical parameters.
    """
    dtype = np.dtype(dtype or np.float32)
    layout = parameter_layout(cfg)
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in layout.shapes.items():
        suffix = name.rsplit(".", 1)[-1]
        if suffix == KERNEL:
            data = he_normal(shape, fan_in(name, shape), rng, dtype)
        elif suffix == GAMMA:
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        tensors[name] = Tensor(data, requires_grad=True, dtype=dtype)
    bn_states: Dict[str, BatchNormState] = OrderedDict(
        (name, BatchNormState.initial(channels, dtype))
        for name, channels in layout.batch_norms.items()
    )
    return ModelParams(config=cfg, tensors=tensors, bn_states=bn_states)  # type: ignore[arg-type]
