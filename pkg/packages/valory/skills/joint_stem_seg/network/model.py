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

"""This module contains the shared-encoder, dual-decoder network's forward pass."""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from packages.valory.skills.joint_stem_seg.autodiff.functional import conv2d, softmax
from packages.valory.skills.joint_stem_seg.autodiff.tensor import Mode, ShapeError, Tensor
from packages.valory.skills.joint_stem_seg.models import (
    PLANT_HEAD,
    STEM_HEAD,
    NetworkConfig,
)
from packages.valory.skills.joint_stem_seg.network.layers import (
    ForwardContext,
    bottom_stage,
    decoder_stage,
    encoder_stage,
)
from packages.valory.skills.joint_stem_seg.network.params import (
    BIAS,
    KERNEL,
    ModelParams,
    parameter_layout,
)


class NetworkOutput(NamedTuple):
    """Per-pixel class distributions of both heads; an absent head is None."""

    plant_probs: Optional[Tensor]
    stem_probs: Optional[Tensor]


def check_input_shape(shape: tuple, cfg: NetworkConfig) -> None:
    """Reject inputs the network cannot process."""
    if len(shape) != 4:
        raise ShapeError(f"network input must be B x C x H x W, got {shape}")
    if shape[1] != cfg.input_channels:
        raise ShapeError(
            f"network expects {cfg.input_channels} input channels, got input {shape}"
        )
    multiple = cfg.required_multiple
    height, width = shape[2:]
    if height % multiple or width % multiple:
        raise ShapeError(
            f"input height {height} and width {width} must be multiples of {multiple} "
            f"for {cfg.levels} levels"
        )


def forward(
    image: Tensor,
    params: ModelParams,
    mode: Mode,
    rng: Optional[np.random.Generator] = None,
) -> NetworkOutput:
    """Run the network: one encoder pass, then every configured head on the same code and skips.

    :param image: B x C x H x W preprocessed input.
    :param params: the network parameters.
    :param mode: train (batch statistics, dropout) or eval.
    :param rng: the dropout generator, needed in train mode.
    :return: B x 4 x H x W plant and B x 3 x H x W stem probabilities.
    """
    cfg = params.config
    check_input_shape(image.shape, cfg)
    ctx = ForwardContext(params=params, mode=mode, rng=rng)

    skips: List[Tensor] = []
    x = image
    for level in range(cfg.levels):
        skip, x = encoder_stage(ctx, level, x)
        skips.append(skip)
    code = bottom_stage(ctx, x)

    probs = {}
    for head in cfg.heads:
        x = code
        for level in reversed(range(cfg.levels)):
            x = decoder_stage(ctx, head, level, x, skips[level])
        logits = conv2d(
            x, params[f"{head}.classifier.{KERNEL}"], params[f"{head}.classifier.{BIAS}"]
        )
        probs[head] = softmax(logits)
    return NetworkOutput(probs.get(PLANT_HEAD), probs.get(STEM_HEAD))


def count_parameters(params: ModelParams) -> int:
    """The number of learnable values (running statistics excluded)."""
    return sum(tensor.size for tensor in params.tensors.values())


@dataclass(frozen=True)
class ParameterBudget:
    """Parameter counts of a joint model and of the two single-task models it replaces."""

    joint: int
    plant_only: int
    stem_only: int

    @property
    def separate(self) -> int:
        """The parameters of two independent single-task models."""
        return self.plant_only + self.stem_only

    @property
    def ratio(self) -> float:
        """Joint over separate parameter count."""
        return self.joint / self.separate

    @property
    def saving(self) -> float:
        """The fraction of parameters the shared encoder saves."""
        return 1.0 - self.ratio


def shared_encoder_saving(cfg: NetworkConfig) -> ParameterBudget:
    """Compare the joint model against two single-task models of the same configuration."""
    joint = cfg.with_heads(PLANT_HEAD, STEM_HEAD)
    return ParameterBudget(
        joint=parameter_layout(joint).size,
        plant_only=parameter_layout(cfg.with_heads(PLANT_HEAD)).size,
        stem_only=parameter_layout(cfg.with_heads(STEM_HEAD)).size,
    )
