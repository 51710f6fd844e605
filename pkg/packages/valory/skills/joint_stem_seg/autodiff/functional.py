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

"""This module contains the differentiable layer operations of the network."""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from packages.valory.skills.joint_stem_seg.autodiff.tensor import (
    Mode,
    ShapeError,
    Tensor,
    record,
)

SAME = "same"
VALID = "valid"
PADDING_MODES = (SAME, VALID)

DEFAULT_LEAKY_SLOPE = 0.01
DEFAULT_BN_EPSILON = 1e-5
DEFAULT_BN_MOMENTUM = 0.9


def _require_rank(tensor: Tensor, rank: int, name: str) -> None:
    """Reject a tensor of the wrong rank."""
    if len(tensor.shape) != rank:
        raise ShapeError(f"{name} must have rank {rank}, got shape {tensor.shape}")


def _same_padding(extent: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """Return (output extent, pad before, pad after) for `same` padding."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return out, total // 2, total - total // 2


def _im2col(
    padded: np.ndarray, kernel_h: int, kernel_w: int, stride: int, out_h: int, out_w: int
) -> np.ndarray:
    """Unfold a padded B x C x Hp x Wp array into B x (C*kH*kW) x (H'*W') columns."""
    batch, channels = padded.shape[:2]
    s_b, s_c, s_h, s_w = padded.strides
    windows = as_strided(
        padded,
        shape=(batch, channels, kernel_h, kernel_w, out_h, out_w),
        strides=(s_b, s_c, s_h, s_w, s_h * stride, s_w * stride),
        writeable=False,
    )
    return windows.reshape(batch, channels * kernel_h * kernel_w, out_h * out_w)


def _col2im(
    cols: np.ndarray,
    padded_shape: Tuple[int, int, int, int],
    kernel_h: int,
    kernel_w: int,
    stride: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Scatter-add columns back onto the padded input grid."""
    batch, channels = padded_shape[:2]
    cols = cols.reshape(batch, channels, kernel_h, kernel_w, out_h, out_w)
    padded = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kernel_h):
        for j in range(kernel_w):
            padded[
                :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
            ] += cols[:, :, i, j]
    return padded


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = SAME,
) -> Tensor:
    """2-D cross-correlation of a B x C x H x W input with an F x C x kH x kW kernel.

    Under `same` padding the output extent is ceil(H / stride) and the kernel
    must be odd; `valid` padding accepts any kernel that fits the input.

    :param x: the input tensor.
    :param kernel: the filter bank.
    :param bias: optional per-filter offsets of shape (F,).
    :param stride: the step between windows.
    :param padding: `same` or `valid`.
    :return: the B x F x H' x W' response.
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(kernel, 4, "conv2d kernel")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding not in PADDING_MODES:
        raise ValueError(f"padding must be one of {PADDING_MODES}, got {padding!r}")
    batch, channels, height, width = x.shape
    filters, kernel_channels, kernel_h, kernel_w = kernel.shape
    if kernel_channels != channels:
        raise ShapeError(
            f"conv2d kernel {kernel.shape} expects {kernel_channels} channels "
            f"but input {x.shape} has {channels}"
        )
    if bias is not None and bias.shape != (filters,):
        raise ShapeError(
            f"conv2d bias {bias.shape} does not match kernel {kernel.shape}"
        )

    if padding == SAME:
        if kernel_h % 2 == 0 or kernel_w % 2 == 0:
            raise ShapeError(
                f"same padding needs an odd kernel, got {kernel.shape} for input {x.shape}"
            )
        out_h, top, bottom = _same_padding(height, kernel_h, stride)
        out_w, left, right = _same_padding(width, kernel_w, stride)
    else:
        if kernel_h > height or kernel_w > width:
            raise ShapeError(
                f"valid convolution kernel {kernel.shape} is larger than input {x.shape}"
            )
        out_h = (height - kernel_h) // stride + 1
        out_w = (width - kernel_w) // stride + 1
        top = bottom = left = right = 0

    padded = np.ascontiguousarray(
        np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    )
    cols = _im2col(padded, kernel_h, kernel_w, stride, out_h, out_w)
    weights = kernel.data.reshape(filters, -1)
    out = np.matmul(weights, cols)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(batch, filters, out_h, out_w)

    def grad_fn(grad: np.ndarray) -> List[Optional[np.ndarray]]:
        flat = grad.reshape(batch, filters, out_h * out_w)
        grad_kernel = np.matmul(flat, cols.transpose(0, 2, 1)).sum(axis=0)
        grad_cols = np.matmul(weights.T, flat)
        grad_padded = _col2im(
            grad_cols, padded.shape, kernel_h, kernel_w, stride, out_h, out_w
        )
        grad_x = grad_padded[:, :, top : top + height, left : left + width]
        grads: List[Optional[np.ndarray]] = [
            grad_x,
            grad_kernel.reshape(kernel.shape),
        ]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", out.astype(x.dtype, copy=False), inputs, grad_fn)


def transpose_conv2d(x: Tensor, kernel: Tensor, stride: int = 2) -> Tensor:
    """Non-overlapping strided transpose convolution.

    Each input pixel v at (i, j) writes the block v * kernel[c, f] to the
    output window starting at (i * stride, j * stride).

    :param x: B x C x H x W input.
    :param kernel: C x F x stride x stride filter bank.
    :param stride: the upsampling factor.
    :return: B x F x (H * stride) x (W * stride) output.
    """
    _require_rank(x, 4, "transpose_conv2d input")
    _require_rank(kernel, 4, "transpose_conv2d kernel")
    batch, channels, height, width = x.shape
    kernel_channels, filters, kernel_h, kernel_w = kernel.shape
    if kernel_h != stride or kernel_w != stride:
        raise ShapeError(
            f"transpose_conv2d needs a {stride}x{stride} kernel for stride {stride}, "
            f"got kernel {kernel.shape}"
        )
    if kernel_channels != channels:
        raise ShapeError(
            f"transpose_conv2d kernel {kernel.shape} expects {kernel_channels} channels "
            f"but input {x.shape} has {channels}"
        )
    blocks = np.einsum("bcij,cfpq->bfipjq", x.data, kernel.data, optimize=True)
    out = blocks.reshape(batch, filters, height * stride, width * stride)

    def grad_fn(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_blocks = grad.reshape(batch, filters, height, stride, width, stride)
        grad_x = np.einsum(
            "bfipjq,cfpq->bcij", grad_blocks, kernel.data, optimize=True
        )
        grad_kernel = np.einsum(
            "bcij,bfipjq->cfpq", x.data, grad_blocks, optimize=True
        )
        return grad_x, grad_kernel

    return record(
        "transpose_conv2d", out.astype(x.dtype, copy=False), (x, kernel), grad_fn
    )


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    """Elementwise x if x >= 0 else slope * x."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    factor = np.where(x.data >= 0, 1.0, slope).astype(x.dtype)
    return record("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


@dataclass
class BatchNormState:
    """Per-channel running statistics of a batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    num_batches_tracked: int = 0

    @classmethod
    def initial(cls, channels: int, dtype: np.dtype = np.float32) -> "BatchNormState":
        """Zero mean, unit variance, no batches seen."""
        return cls(
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    def copy(self) -> "BatchNormState":
        """Return an independent copy."""
        return BatchNormState(
            self.running_mean.copy(),
            self.running_var.copy(),
            self.num_batches_tracked,
        )


def batch_norm(  # pylint: disable=too-many-arguments,too-many-locals
    x: Tensor,
    state: BatchNormState,
    gamma: Tensor,
    beta: Tensor,
    mode: Mode,
    epsilon: float = DEFAULT_BN_EPSILON,
    momentum: float = DEFAULT_BN_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalization of a B x C x H x W tensor.

    Train mode normalizes with the biased batch statistics over B, H and W and
    folds them into the running statistics with
    running = momentum * running + (1 - momentum) * batch.
    Eval mode normalizes with the running statistics.
    """
    _require_rank(x, 4, "batch_norm input")
    if epsilon <= 0:
        raise ValueError(f"batch-norm epsilon must be positive, got {epsilon}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batch_norm gamma {gamma.shape} and beta {beta.shape} "
            f"do not match input {x.shape}"
        )
    if state.running_mean.shape != (channels,):
        raise ShapeError(
            f"batch_norm running stats {state.running_mean.shape} do not match input {x.shape}"
        )
    axes = (0, 2, 3)
    scale = gamma.data[None, :, None, None]

    if mode is Mode.EVAL:
        if state.num_batches_tracked == 0:
            raise ValueError(
                "batch_norm in eval mode needs running statistics; none were tracked"
            )
        inv_std = 1.0 / np.sqrt(state.running_var + epsilon)
        x_hat = (x.data - state.running_mean[None, :, None, None]) * inv_std[
            None, :, None, None
        ]
        out = scale * x_hat + beta.data[None, :, None, None]

        def eval_grad(grad: np.ndarray) -> Tuple[np.ndarray, ...]:
            return (
                grad * scale * inv_std[None, :, None, None],
                (grad * x_hat).sum(axis=axes),
                grad.sum(axis=axes),
            )

        return record(
            "batch_norm", out.astype(x.dtype, copy=False), (x, gamma, beta), eval_grad
        )

    count = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = (1.0 / np.sqrt(var + epsilon))[None, :, None, None]
    x_hat = (x.data - mean[None, :, None, None]) * inv_std
    out = scale * x_hat + beta.data[None, :, None, None]

    state.running_mean = (
        momentum * state.running_mean + (1.0 - momentum) * mean
    ).astype(state.running_mean.dtype)
    state.running_var = (
        momentum * state.running_var + (1.0 - momentum) * var
    ).astype(state.running_var.dtype)
    state.num_batches_tracked += 1

    def train_grad(grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        grad_hat = grad * scale
        grad_x = (
            inv_std
            / count
            * (
                count * grad_hat
                - grad_hat.sum(axis=axes, keepdims=True)
                - x_hat * (grad_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        )
        return grad_x, (grad * x_hat).sum(axis=axes), grad.sum(axis=axes)

    return record(
        "batch_norm", out.astype(x.dtype, copy=False), (x, gamma, beta), train_grad
    )


def dropout(
    x: Tensor, p: float, mode: Mode, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Inverted dropout: zero each value with probability p and scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if mode is Mode.EVAL or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded generator")
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return record("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def concat(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate B x C_i x H x W tensors along the channel axis, in argument order."""
    if not inputs:
        raise ValueError("concat needs at least one tensor")
    for tensor in inputs:
        _require_rank(tensor, 4, "concat input")
    first = inputs[0]
    for tensor in inputs[1:]:
        if (tensor.shape[0], *tensor.shape[2:]) != (first.shape[0], *first.shape[2:]):
            raise ShapeError(
                f"concat inputs disagree outside the channel axis: {first.shape} vs {tensor.shape}"
            )
    if len(inputs) == 1:
        return first
    bounds = np.cumsum([tensor.shape[1] for tensor in inputs])[:-1]
    out = np.concatenate([tensor.data for tensor in inputs], axis=1)
    return record(
        "concat",
        out,
        inputs,
        lambda g: np.split(g, bounds, axis=1),
    )


def softmax(x: Tensor) -> Tensor:
    """Max-shifted softmax over the channel axis of a B x K x H x W tensor."""
    _require_rank(x, 4, "softmax input")
    if x.shape[1] < 2:
        raise ShapeError(f"softmax needs at least two channels, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def grad_fn(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (grad - (grad * out).sum(axis=1, keepdims=True)),)

    return record("softmax", out, (x,), grad_fn)

