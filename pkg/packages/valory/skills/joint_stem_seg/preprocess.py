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

"""This module contains the channel-wise input normalization: smooth, standardize, stretch."""

from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from packages.valory.skills.joint_stem_seg.models import PreprocessConfig

DEFAULT_PREPROCESS = PreprocessConfig()


def gaussian_kernel(cfg: PreprocessConfig = DEFAULT_PREPROCESS) -> np.ndarray:
    """The square kernel sampled from the 2-D Gaussian at integer offsets, normalized to sum 1."""
    radius = cfg.kernel_size // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64) - cfg.gaussian_mean
    squared = offsets[:, None] ** 2 + offsets[None, :] ** 2
    weights = np.exp(-squared / (2.0 * cfg.gaussian_variance))
    return weights / weights.sum()


def gaussian_smooth(
    channel: np.ndarray, cfg: PreprocessConfig = DEFAULT_PREPROCESS
) -> np.ndarray:
    """Smooth one H x W channel; borders replicate the edge pixels."""
    return ndimage.correlate(
        np.asarray(channel, dtype=np.float64), gaussian_kernel(cfg), mode="nearest"
    )


def standardize(
    channel: np.ndarray,
    epsilon: float = DEFAULT_PREPROCESS.zero_variance_epsilon,
    divide_by_std: bool = False,
) -> np.ndarray:
    """Subtract the mean and divide by the variance (or the standard deviation).

    A constant channel maps to zeros.
    """
    values = np.asarray(channel, dtype=np.float64)
    if values.size == 0 or values.max() == values.min():
        return np.zeros_like(values)
    centered = values - values.mean()
    spread = values.std() if divide_by_std else values.var()
    return centered / (spread + epsilon)


def contrast_stretch(
    channel: np.ndarray,
    output_range: Sequence[float] = DEFAULT_PREPROCESS.output_range,
) -> np.ndarray:
    """Map [min, max] affinely onto the output range; a constant channel maps to the range's midpoint."""
    low, high = float(output_range[0]), float(output_range[1])
    values = np.asarray(channel, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    minimum, maximum = values.min(), values.max()
    if maximum == minimum:
        return np.full_like(values, (low + high) / 2.0)
    unit = (values - minimum) / (maximum - minimum)
    return np.clip(unit * (high - low) + low, low, high)


def preprocess_channel(
    channel: np.ndarray, cfg: PreprocessConfig = DEFAULT_PREPROCESS
) -> np.ndarray:
    """Smooth, then standardize, then stretch one channel."""
    smoothed = gaussian_smooth(channel, cfg)
    standardized = standardize(smoothed, cfg.zero_variance_epsilon, cfg.divide_by_std)
    return contrast_stretch(standardized, cfg.output_range)


def preprocess_image(
    image: np.ndarray,
    cfg: PreprocessConfig = DEFAULT_PREPROCESS,
    dtype: Optional[np.dtype] = None,
) -> np.ndarray:
    """Normalize every channel of an H x W x C (or H x W) image independently.

    :param image: the raw image, usually 8-bit.
    :param cfg: the normalization parameters.
    :param dtype: the output precision (float32 by default).
    :return: the C x H x W network input.
    """
    values = np.asarray(image)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise ValueError(f"image must be H x W x C, got shape {values.shape}")
    channels = [preprocess_channel(values[:, :, c], cfg) for c in range(values.shape[2])]
    return np.stack(channels).astype(dtype or np.float32)


def preprocess_batch(
    images: Sequence[np.ndarray],
    cfg: PreprocessConfig = DEFAULT_PREPROCESS,
    dtype: Optional[np.dtype] = None,
) -> np.ndarray:
    """Normalize a list of same-sized H x W x C images into one B x C x H x W array."""
    if not images:
        raise ValueError("preprocess_batch needs at least one image")
    return np.stack([preprocess_image(image, cfg, dtype) for image in images])
