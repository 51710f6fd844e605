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

"""This module contains the building blocks of the FC-DenseNet: layers, dense blocks, stages."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from packages.valory.skills.joint_stem_seg.autodiff.functional import (
    batch_norm,
    concat,
    conv2d,
    dropout,
    leaky_relu,
    transpose_conv2d,
)
from packages.valory.skills.joint_stem_seg.autodiff.tensor import Mode, ShapeError, Tensor
from packages.valory.skills.joint_stem_seg.models import DenseBlockConfig
from packages.valory.skills.joint_stem_seg.network.params import (
    BETA,
    BIAS,
    BOTTOM,
    ENCODER,
    GAMMA,
    KERNEL,
    UPSAMPLE_FACTOR,
    ModelParams,
)


@dataclass
class ForwardContext:
    """What every layer of one forward pass shares."""

    params: ModelParams
    mode: Mode
    rng: Optional[np.random.Generator] = None


def conv_layer(ctx: ForwardContext, name: str, x: Tensor, stride: int = 1) -> Tensor:
    """A convolutional layer: conv -> leaky-ReLU -> batch-norm -> dropout.

    With `bn_before_activation` the normalization runs before the activation.
    """
    cfg = ctx.params.config
    params = ctx.params
    out = conv2d(x, params[f"{name}.{KERNEL}"], params[f"{name}.{BIAS}"], stride=stride)

    def normalize(value: Tensor) -> Tensor:
        return batch_norm(
            value,
            params.bn_states[name],
            params[f"{name}.{GAMMA}"],
            params[f"{name}.{BETA}"],
            ctx.mode,
            epsilon=cfg.bn_epsilon,
            momentum=cfg.bn_momentum,
        )

    if cfg.bn_before_activation:
        out = leaky_relu(normalize(out), cfg.leaky_slope)
    else:
        out = normalize(leaky_relu(out, cfg.leaky_slope))
    return dropout(out, cfg.dropout_p, ctx.mode, ctx.rng)


def dense_block(
    ctx: ForwardContext, name: str, x: Tensor, block: DenseBlockConfig
) -> Tensor:
    """Run a dense block and return the N·G feature maps its layers produce.

    Layer i reads the block input concatenated with every earlier layer's output.
    """
    outputs: List[Tensor] = []
    for index in range(block.num_layers):
        layer_input = concat([x, *outputs])
        narrowed = conv_layer(ctx, f"{name}.{index}.bottleneck", layer_input)
        outputs.append(conv_layer(ctx, f"{name}.{index}.conv", narrowed))
    return concat(outputs)


def encoder_stage(ctx: ForwardContext, level: int, x: Tensor) -> Tuple[Tensor, Tensor]:
    """Return (skip, down): the compressed block output and its 5x5 stride-2 downsampling."""
    height, width = x.shape[2:]
    if height % 2 or width % 2:
        raise ShapeError(
            f"encoder level {level} needs even spatial extents, got {x.shape}"
        )
    block = ctx.params.config.block(level)
    grown = dense_block(ctx, f"{ENCODER}.{level}.dense", x, block)
    skip = conv_layer(ctx, f"{ENCODER}.{level}.compress", concat([x, grown]))
    down = conv_layer(ctx, f"{ENCODER}.{level}.down", skip, stride=2)
    return skip, down


def bottom_stage(ctx: ForwardContext, x: Tensor) -> Tensor:
    """The encoded feature volume both decoders read."""
    cfg = ctx.params.config
    grown = dense_block(ctx, f"{ENCODER}.{BOTTOM}.dense", x, cfg.block(cfg.levels))
    return conv_layer(ctx, f"{ENCODER}.{BOTTOM}.compress", concat([x, grown]))


def decoder_stage(
    ctx: ForwardContext, head: str, level: int, x: Tensor, skip: Tensor
) -> Tensor:
    """Upsample by a 2x2 stride-2 transpose convolution, join the skip, run a dense block."""
    up = transpose_conv2d(
        x, ctx.params[f"{head}.{level}.up.{KERNEL}"], stride=UPSAMPLE_FACTOR
    )
    if up.shape[2:] != skip.shape[2:]:
        raise ShapeError(
            f"{head} decoder level {level}: upsampled {up.shape} does not match skip {skip.shape}"
        )
    return dense_block(
        ctx, f"{head}.{level}.dense", concat([up, skip]), ctx.params.config.block(level)
    )
