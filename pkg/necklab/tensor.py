"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive computes its forward value with numpy and, when any input
tracks gradients, records a node holding the backward rule. Nodes are
numbered as they are created, so sorting by that number is a topological
order of the recorded graph.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .const import BN_EPS, BN_MOMENTUM, GRADCHECK_STEP
from .exceptions import GradientError, ShapeError

_LOGGER = logging.getLogger(__name__)

Mode = Literal["train", "eval"]
BackwardRule = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_NODE_COUNTER = itertools.count()


@dataclass(eq=False)
class Node:
    """One executed primitive with references to its inputs."""

    op: str
    parents: tuple[Tensor, ...]
    backward: BackwardRule
    seq: int = field(default_factory=lambda: next(_NODE_COUNTER))


class Tensor:
    """Row-major float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(
        self,
        data: np.ndarray | Sequence[float] | float,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        """Initialize the tensor from anything numpy can convert."""
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    def __repr__(self) -> str:
        """Return a short description."""
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    @property
    def shape(self) -> tuple[int, ...]:
        """Return the extents."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Return the number of axes."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Return the number of elements."""
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        """Return True if the tensor was not produced by a recorded primitive."""
        return self.node is None

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.size != 1:
            raise ShapeError("item", self.shape, detail="expected a single element")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def detach(self) -> Tensor:
        """Return a tensor sharing no graph with this one."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def backward(self) -> None:
        """Populate gradients of every tracking leaf reachable from this scalar."""
        Graph.from_output(self).backward()

    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, other)

    def __radd__(self, other: float) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other: float) -> Tensor:
        return scale(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


class Graph:
    """Recorded primitives reachable from one output, in topological order."""

    def __init__(self, output: Tensor, order: list[Tensor]) -> None:
        """Initialize from an output and its producing tensors sorted by creation."""
        self.output = output
        self.order = order

    @classmethod
    def from_output(cls, output: Tensor) -> Graph:
        """Collect every recorded node that contributes to ``output``."""
        seen: set[int] = set()
        produced: list[Tensor] = []
        stack = [output]
        while stack:
            tensor = stack.pop()
            if id(tensor) in seen or tensor.node is None:
                continue
            seen.add(id(tensor))
            produced.append(tensor)
            stack.extend(tensor.node.parents)
        produced.sort(key=lambda tensor: tensor.node.seq)
        return cls(output, produced)

    def __len__(self) -> int:
        """Return the number of recorded nodes."""
        return len(self.order)

    def backward(self) -> None:
        """Replay the backward rules in reverse topological order."""
        output = self.output
        if output.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {output.shape}")
        if not output.requires_grad:
            raise GradientError("backward on a tensor that does not track gradients")
        if output.node is None:
            seed = np.ones_like(output.data)
            output.grad = seed if output.grad is None else output.grad + seed
            return

        pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for tensor in reversed(self.order):
            upstream = pending.pop(id(tensor), None)
            if upstream is None:
                continue
            node = tensor.node
            parent_grads = node.backward(upstream)
            for parent, grad in zip(node.parents, parent_grads, strict=True):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.node is None:
                    parent.grad = grad.copy() if parent.grad is None else parent.grad + grad
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + grad
                else:
                    pending[id(parent)] = grad


def _as_tensor(value: Tensor | np.ndarray | float) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data: np.ndarray, op: str, parents: tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    """Wrap a forward value, recording the node only when gradients are tracked."""
    out = Tensor(data)
    if any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out.node = Node(op, parents, rule)
    return out


# Element-wise and linear primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Multiply two matrices."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def rule(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad @ b_data.T, a_data.T @ grad

    return _record(a_data @ b_data, "matmul", (a, b), rule)


def add(a: Tensor, b: Tensor | float) -> Tensor:
    """Add a same-shape tensor, a bias over the last axis, or a scalar."""
    if not isinstance(b, Tensor):
        shift = float(b)
        return _record(a.data + shift, "add_scalar", (a,), lambda grad: (grad,))

    if a.shape == b.shape:
        return _record(a.data + b.data, "add", (a, b), lambda grad: (grad, grad))

    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        reduce_axes = tuple(range(a.ndim - 1))

        def bias_rule(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return grad, grad.sum(axis=reduce_axes)

        return _record(a.data + b.data, "add_bias", (a, b), bias_rule)

    raise ShapeError("add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Subtract two tensors of the same shape."""
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return _record(a.data - b.data, "sub", (a, b), lambda grad: (grad, -grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Multiply two tensors of the same shape element-wise."""
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _record(a_data * b_data, "mul", (a, b), lambda grad: (grad * b_data, grad * a_data))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply a tensor by a scalar."""
    factor = float(factor)
    return _record(a.data * factor, "scale", (a,), lambda grad: (grad * factor,))


def relu(a: Tensor) -> Tensor:
    """Rectify; the subgradient at 0 is 0."""
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), "relu", (a,), lambda grad: (grad * mask,))


def sum(a: Tensor) -> Tensor:  # noqa: A001
    """Sum every element into a scalar."""
    shape = a.shape
    return _record(
        np.array(a.data.sum()), "sum", (a,), lambda grad: (np.broadcast_to(grad, shape).copy(),)
    )


def mean(a: Tensor) -> Tensor:
    """Average every element into a scalar."""
    shape, count = a.shape, a.size
    if count == 0:
        raise ShapeError("mean", a.shape, detail="mean of an empty tensor")

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(grad / count, shape).copy(),)

    return _record(np.array(a.data.mean()), "mean", (a,), rule)


# Shape primitives


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Give the elements a new shape."""
    original = a.shape
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as err:
        raise ShapeError("reshape", original, tuple(shape)) from err
    return _record(data, "reshape", (a,), lambda grad: (grad.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    if not tensors:
        raise ShapeError("concat", detail="nothing to concatenate")
    first = tensors[0]
    for other in tensors[1:]:
        if other.ndim != first.ndim or any(
            dim_a != dim_b
            for index, (dim_a, dim_b) in enumerate(zip(first.shape, other.shape, strict=True))
            if index != axis % first.ndim
        ):
            raise ShapeError("concat", first.shape, other.shape)
    sizes = [tensor.shape[axis] for tensor in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def rule(grad: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(grad, bounds, axis=axis))

    return _record(
        np.concatenate([tensor.data for tensor in tensors], axis=axis),
        "concat",
        tuple(tensors),
        rule,
    )


def gather(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick ``a[rows[k], cols[k]]`` into a vector."""
    if a.ndim != 2:
        raise ShapeError("gather", a.shape, detail="expects a matrix")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.shape

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), grad)
        return (out,)

    return _record(a.data[rows, cols], "gather", (a,), rule)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a matrix; repeated indices are allowed."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros(shape)
        np.add.at(out, index, grad)
        return (out,)

    return _record(a.data[index], "take_rows", (a,), rule)


# Convolutional primitives


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``(N, C, H, W)`` input with ``(O, C, kh, kw)`` kernels."""
    if stride not in (1, 2):
        raise ShapeError("conv2d", x.shape, weight.shape, detail=f"stride {stride} not in {{1, 2}}")
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    batch, channels, height, width = x.shape
    out_channels, _, kh, kw = weight.shape
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="kernel larger than input")

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[
        :, :, : stride * out_h : stride, : stride * out_w : stride
    ]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    w_data = weight.data

    def rule(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        columns = np.tensordot(grad, w_data, axes=([1], [0]))
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
                ] += columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, padding : padding + height, padding : padding + width]
        return grad_x, grad_w

    return _record(np.ascontiguousarray(out), "conv2d", (x, weight), rule)


def max_pool2d(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Take the maximum over square windows; ties route the gradient to the first maximum."""
    stride = kernel if stride is None else stride
    if x.ndim != 4:
        raise ShapeError("max_pool2d", x.shape, detail="expects (N, C, H, W)")
    batch, channels, height, width = x.shape
    out_h = (height - kernel) // stride + 1
    out_w = (width - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError("max_pool2d", x.shape, (kernel, kernel), detail="window larger than input")

    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[
        :, :, : stride * out_h : stride, : stride * out_w : stride
    ]
    flat = windows.reshape(batch, channels, out_h, out_w, kernel * kernel)
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    n_idx, c_idx, h_idx, w_idx = np.indices((batch, channels, out_h, out_w))
    rows = h_idx * stride + winner // kernel
    cols = w_idx * stride + winner % kernel
    shape = x.shape

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        grad_x = np.zeros(shape)
        np.add.at(grad_x, (n_idx, c_idx, rows, cols), grad)
        return (grad_x,)

    return _record(out, "max_pool2d", (x,), rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average the spatial extent of ``(N, C, H, W)`` or ``(C, H, W)`` maps."""
    if x.ndim not in (3, 4):
        raise ShapeError("global_avg_pool", x.shape, detail="expects (N, C, H, W) or (C, H, W)")
    height, width = x.shape[-2:]
    area = height * width
    shape = x.shape

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(grad[..., None, None] / area, shape).copy(),)

    return _record(x.data.mean(axis=(-2, -1)), "global_avg_pool", (x,), rule)


# Normalization


@dataclass(eq=False)
class BNState:
    """Affine parameters and running statistics of one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def create(
        cls,
        num_features: int,
        eps: float = BN_EPS,
        momentum: float = BN_MOMENTUM,
        bias_trainable: bool = True,
    ) -> BNState:
        """Create a layer with unit scale, zero shift, zero mean and unit variance."""
        return cls(
            gamma=Tensor(np.ones(num_features), requires_grad=True, name="bn.gamma"),
            beta=Tensor(np.zeros(num_features), requires_grad=bias_trainable, name="bn.beta"),
            running_mean=np.zeros(num_features),
            running_var=np.ones(num_features),
            eps=eps,
            momentum=momentum,
        )

    @property
    def num_features(self) -> int:
        """Return the channel count."""
        return self.gamma.shape[0]


def batch_norm(x: Tensor, state: BNState, mode: Mode = "train") -> Tensor:
    """Normalize ``(N, D)`` features or ``(N, C, H, W)`` maps per channel.

    Train mode normalizes with the biased batch statistics and folds them into
    the running statistics with ``running = (1 - m) * running + m * batch``.
    Eval mode uses the running statistics.
    """
    if x.ndim not in (2, 4) or x.shape[1] != state.num_features:
        raise ShapeError("batch_norm", x.shape, state.gamma.shape)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    view = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    gamma, beta = state.gamma, state.beta
    gamma_b = gamma.data.reshape(view)

    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batch_norm", x.shape, detail="train mode needs batch size >= 2")
        count = x.size // state.num_features
        mu = x.data.mean(axis=axes)
        var = ((x.data - mu.reshape(view)) ** 2).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat = (x.data - mu.reshape(view)) * inv_std.reshape(view)
        momentum = state.momentum
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu
        state.running_var = (1.0 - momentum) * state.running_var + momentum * var

        def train_rule(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            grad_gamma = (grad * x_hat).sum(axis=axes)
            grad_beta = grad.sum(axis=axes)
            grad_hat = grad * gamma_b
            grad_x = (inv_std.reshape(view) / count) * (
                count * grad_hat
                - grad_hat.sum(axis=axes).reshape(view)
                - x_hat * (grad_hat * x_hat).sum(axis=axes).reshape(view)
            )
            return grad_x, grad_gamma, grad_beta

        out = x_hat * gamma_b + beta.data.reshape(view)
        return _record(out, "batch_norm", (x, gamma, beta), train_rule)

    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    x_hat = (x.data - state.running_mean.reshape(view)) * inv_std.reshape(view)

    def eval_rule(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            grad * gamma_b * inv_std.reshape(view),
            (grad * x_hat).sum(axis=axes),
            grad.sum(axis=axes),
        )

    out = x_hat * gamma_b + beta.data.reshape(view)
    return _record(out, "batch_norm", (x, gamma, beta), eval_rule)


# Fused loss primitives


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Average ``-sum(q * log_softmax(z))`` over rows, computed with log-sum-exp."""
    targets = np.asarray(targets, dtype=np.float64)
    if logits.ndim != 2 or targets.shape != logits.shape:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    rows = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -(targets * log_probs).sum() / rows
    probs = np.exp(log_probs)

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * (probs * targets.sum(axis=1, keepdims=True) - targets) / rows,)

    return _record(np.array(loss), "cross_entropy", (logits,), rule)


def pairwise_distance(x: Tensor) -> Tensor:
    """Non-squared Euclidean distances between rows; subgradient 0 at zero distance."""
    if x.ndim != 2:
        raise ShapeError("pairwise_distance", x.shape, detail="expects (B, D)")
    diff = x.data[:, None, :] - x.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    safe = np.where(dist > 0, dist, 1.0)

    def rule(grad: np.ndarray) -> tuple[np.ndarray]:
        coef = np.where(dist > 0, grad / safe, 0.0)
        coef = coef + coef.T
        return ((coef[:, :, None] * diff).sum(axis=1),)

    return _record(dist, "pairwise_distance", (x,), rule)


# Finite-difference oracle


def gradient_check(
    op: Callable[..., Tensor],
    input_shapes: Sequence[Sequence[int]],
    seed: int,
    step: float = GRADCHECK_STEP,
) -> float:
    """Compare backward against central differences on seeded inputs.

    Non-scalar outputs are reduced with fixed random weights first.

    Returns:
        max over all input entries of |analytic - numeric| / max(1, |numeric|)
    """
    rng = np.random.default_rng(seed)
    inputs = [
        Tensor(rng.standard_normal(tuple(shape)), requires_grad=True) for shape in input_shapes
    ]
    first = op(*inputs)
    weights = rng.standard_normal(first.shape)

    def objective() -> Tensor:
        out = op(*inputs)
        if out.size == 1 and out.ndim == 0:
            return out
        return sum(mul(out, Tensor(weights)))

    objective().backward()
    analytic = [tensor.grad.copy() for tensor in inputs]

    worst = 0.0
    for tensor, grad in zip(inputs, analytic, strict=True):
        flat = tensor.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            upper = objective().item()
            flat[index] = original - step
            lower = objective().item()
            flat[index] = original
            numeric = (upper - lower) / (2.0 * step)
            error = abs(grad_flat[index] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)
    _LOGGER.debug("Gradient check (seed=%d) max relative error %.3e", seed, worst)
    return worst
