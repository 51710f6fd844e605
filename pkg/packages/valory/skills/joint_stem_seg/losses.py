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

"""This module contains the multi-task objective: weighted cross entropy, soft IoU and their blend."""

from typing import Sequence, Union

import numpy as np

from packages.valory.skills.joint_stem_seg.autodiff.tensor import ShapeError, Tensor
from packages.valory.skills.joint_stem_seg.models import LossConfig

DEFAULT_LOSS = LossConfig()


def _check_target(probs: Tensor, target: np.ndarray, name: str) -> np.ndarray:
    """Validate a B x H x W label array against B x K x H x W probabilities."""
    target = np.asarray(target)
    if target.ndim == 2:
        target = target[None]
    classes = probs.shape[1]
    if len(probs.shape) != 4 or target.shape != (probs.shape[0], *probs.shape[2:]):
        raise ShapeError(
            f"{name}: target of shape {target.shape} does not fit probabilities {probs.shape}"
        )
    if target.size and (target.min() < 0 or target.max() >= classes):
        raise ValueError(
            f"{name}: target values must lie in 0..{classes - 1}, "
            f"got range {target.min()}..{target.max()}"
        )
    return target.astype(np.int64)


def one_hot(target: np.ndarray, classes: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """B x H x W labels to B x K x H x W indicators."""
    return (target[:, None] == np.arange(classes)[None, :, None, None]).astype(dtype)


def weighted_cross_entropy(
    probs: Tensor,
    target: np.ndarray,
    weights: Sequence[float] = DEFAULT_LOSS.plant_class_weights,
    floor: float = DEFAULT_LOSS.probability_floor,
) -> Tensor:
    """Mean over pixels of w(target) * -ln p(target), with p clamped below at `floor`."""
    target = _check_target(probs, target, "weighted_cross_entropy")
    classes = probs.shape[1]
    if len(weights) != classes:
        raise ShapeError(
            f"weighted_cross_entropy: {len(weights)} class weights for {classes} classes"
        )
    pixels = target.size
    class_weights = np.asarray(weights, dtype=np.float64)
    selector = one_hot(target, classes, np.float64) * class_weights[target][:, None]
    selector = (selector / pixels).astype(probs.dtype)
    return -(probs.clamp_min(floor).log() * selector).sum()


def soft_iou_loss(
    probs: Tensor,
    target: np.ndarray,
    foreground: Sequence[int] = DEFAULT_LOSS.stem_foreground_classes,
) -> Tensor:
    """1 - I / U over the foreground classes, with I = sum p*t and U = sum (p + t - p*t).

    Intersection and union are accumulated over the whole batch. When U is 0
    (no foreground pixels and no foreground mass) the loss is 0.
    """
    target = _check_target(probs, target, "soft_iou_loss")
    classes = probs.shape[1]
    channel_mask = np.zeros((1, classes, 1, 1), dtype=probs.dtype)
    channel_mask[:, list(foreground)] = 1.0
    truth = one_hot(target, classes, probs.dtype) * channel_mask

    intersection = (probs * truth).sum()
    union = (probs * channel_mask).sum() + float(truth.sum()) - intersection
    if union.item() == 0.0:
        return probs.sum() * 0.0
    return 1.0 - intersection / union


def multi_task_loss(
    l_stem: Union[Tensor, float],
    l_plant: Union[Tensor, float],
    alpha: float = DEFAULT_LOSS.alpha,
) -> Union[Tensor, float]:
    """(1 - alpha) * l_stem + alpha * l_plant."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * l_stem + alpha * l_plant
