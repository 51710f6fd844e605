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

"""This module contains the Tensor, its recorded graph, and reverse-mode differentiation."""

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import (
    Any,
    Callable,
    Dict,
    Generator,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

DEFAULT_DTYPE = np.float32
SUPPORTED_DTYPES = (np.float32, np.float64)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]
Operand = Union["Tensor", float, int, np.ndarray]
GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_node_counter = itertools.count()
_grad_state = threading.local()


class ShapeError(ValueError):
    """A tensor operation was given incompatible shapes."""


class Mode(Enum):
    """Whether layers run with batch statistics and dropout (train) or not (eval)."""

    TRAIN = "train"
    EVAL = "eval"


def is_grad_enabled() -> bool:
    """Whether operations currently record the graph."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Generator[None, None, None]:
    """Context manager under which no graph is recorded (inference)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass(eq=False)
class Node:
    """One executed operation: its inputs and how to route the output gradient back."""

    index: int
    op: str
    inputs: Tuple["Tensor", ...]
    grad_fn: GradFn


class Tensor:
    """An N-dimensional array with an optional gradient.

    Image data is laid out batch x channels x height x width. A tensor created
    by an operation on tensors that require gradients records a `Node`, so
    that `backward` can revisit the executed operations in reverse order.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
    ) -> None:
        """Wrap the data, converting it to a supported floating precision."""
        if dtype is None:
            dtype = (
                data.dtype
                if isinstance(data, np.ndarray) and data.dtype in SUPPORTED_DTYPES
                else DEFAULT_DTYPE
            )
        if np.dtype(dtype) not in [np.dtype(item) for item in SUPPORTED_DTYPES]:
            raise TypeError(f"Unsupported tensor dtype {dtype}")
        self.data: np.ndarray = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    def __repr__(self) -> str:
        """Return a short description."""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        """The extents of the tensor."""
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        """The precision of the tensor."""
        return self.data.dtype

    @property
    def size(self) -> int:
        """The number of stored values."""
        return int(self.data.size)

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.size != 1:
            raise ShapeError(f"item needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the data."""
        return self.data.copy()

    def zero_grad(self) -> None:
        """Forget the accumulated gradient."""
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """Add a gradient contribution, owning a private copy of the storage."""
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient of shape {grad.shape} does not match tensor of shape {self.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Back-propagate from this scalar tensor; see `backward`."""
        backward(self)

    # elementwise arithmetic

    def __add__(self, other: Operand) -> "Tensor":
        """Add."""
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        """Add from the right."""
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        """Subtract."""
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        """Subtract from the right."""
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        """Multiply."""
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        """Multiply from the right."""
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        """Divide."""
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "Tensor":
        """Divide from the right."""
        return div(other, self)

    def __neg__(self) -> "Tensor":
        """Negate."""
        return mul(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        """Raise to a constant power."""
        return power(self, exponent)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        """Sum over the given axes (all by default)."""
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        """Arithmetic mean of all values."""
        return tensor_sum(self) * (1.0 / self.size)

    def log(self) -> "Tensor":
        """Natural logarithm."""
        return log(self)

    def exp(self) -> "Tensor":
        """Exponential."""
        return exp(self)

    def clamp_min(self, floor: float) -> "Tensor":
        """Elementwise max(x, floor)."""
        return clamp_min(self, floor)

    def reshape(self, *shape: int) -> "Tensor":
        """Reshape without copying semantics."""
        return reshape(self, shape)


def as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants as non-differentiable tensors, matching the precision of `like`."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def record(
    op: str, data: np.ndarray, inputs: Iterable[Tensor], grad_fn: GradFn
) -> Tensor:
    """Create the output tensor of an operation and record it on the graph.

    A node is recorded only if some input requires a gradient and grad mode
    is enabled; otherwise the result is a plain constant.
    """
    inputs = tuple(inputs)
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(item.requires_grad for item in inputs):
        out.requires_grad = True
        out.node = Node(next(_node_counter), op, inputs, grad_fn)
    return out


class Graph:
    """The operations executed to produce a tensor, in execution order."""

    def __init__(self, nodes: List[Tuple[Node, Tensor]]) -> None:
        """Hold the (node, output) pairs sorted by execution index."""
        self.nodes = nodes

    @classmethod
    def of(cls, output: Tensor) -> "Graph":
        """Collect every recorded operation that `output` depends on."""
        seen: Dict[int, Tuple[Node, Tensor]] = {}
        stack = [output]
        while stack:
            tensor = stack.pop()
            node = tensor.node
            if node is None or node.index in seen:
                continue
            seen[node.index] = (node, tensor)
            stack.extend(node.inputs)
        return cls([seen[index] for index in sorted(seen)])

    def __len__(self) -> int:
        """The number of recorded operations."""
        return len(self.nodes)

    def backward(self) -> None:
        """Visit the operations in exact reverse execution order, routing gradients."""
        for node, output in reversed(self.nodes):
            if output.grad is None:
                continue
            grads = node.grad_fn(output.grad)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor.accumulate_grad(np.asarray(grad, dtype=tensor.dtype))


def backward(loss: Tensor) -> None:
    """Populate `grad` on every tensor requiring it that the scalar `loss` depends on.

    Gradients accumulate by summation when a tensor feeds several consumers,
    which is how a shared encoder receives the gradients of both decoders.

    :param loss: a single-element tensor.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.accumulate_grad(np.ones_like(loss.data))
    Graph.of(loss).backward()


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_inputs(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    """Wrap the operands of a binary operation, sharing the tensor operand's precision."""
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise a + b with broadcasting."""
    x, y = _binary_inputs(a, b)
    return record(
        "add",
        x.data + y.data,
        (x, y),
        lambda g: (unbroadcast(g, x.shape), unbroadcast(g, y.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    """Elementwise a - b with broadcasting."""
    x, y = _binary_inputs(a, b)
    return record(
        "sub",
        x.data - y.data,
        (x, y),
        lambda g: (unbroadcast(g, x.shape), unbroadcast(-g, y.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise a * b with broadcasting."""
    x, y = _binary_inputs(a, b)
    return record(
        "mul",
        x.data * y.data,
        (x, y),
        lambda g: (unbroadcast(g * y.data, x.shape), unbroadcast(g * x.data, y.shape)),
    )


def div(a: Operand, b: Operand) -> Tensor:
    """Elementwise a / b with broadcasting."""
    x, y = _binary_inputs(a, b)
    return record(
        "div",
        x.data / y.data,
        (x, y),
        lambda g: (
            unbroadcast(g / y.data, x.shape),
            unbroadcast(-g * x.data / (y.data * y.data), y.shape),
        ),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise a ** exponent for a constant exponent."""
    return record(
        "pow",
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def log(a: Tensor) -> Tensor:
    """Elementwise natural logarithm."""
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); the gradient is blocked where the floor applies."""
    above = a.data > floor
    return record(
        "clamp_min",
        np.where(above, a.data, np.asarray(floor, dtype=a.dtype)),
        (a,),
        lambda g: (g * above,),
    )


def tensor_sum(
    a: Tensor,
    axis: Optional[Union[int, Tuple[int, ...]]] = None,
    keepdims: bool = False,
) -> Tensor:
    """Sum over the given axes."""
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record("sum", np.asarray(out, dtype=a.dtype), (a,), grad_fn)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Reshape a tensor."""
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return record(
        "reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
    )


def numerical_gradient(
    fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every value of `tensor`."""
    grad = np.zeros(tensor.shape, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    with no_grad():
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + h
            plus = fn().item()
            flat[index] = original - h
            minus = fn().item()
            flat[index] = original
            grad.reshape(-1)[index] = (plus - minus) / (2.0 * h)
    return grad
