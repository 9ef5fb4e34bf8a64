"""Dense float64 tensors with reverse-mode differentiation over a recorded tape.

Operations executed inside an active :class:`Tape` that touch a tensor with
``requires_grad=True`` are appended to the tape together with a backward rule.
Outside a tape nothing is recorded, which is how frozen networks (the SKD
teacher, evaluation passes) run without building a graph.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    ...     tape.backward(loss)
    >>> w.grad
    array([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class GeometryError(ValueError):
    """Convolution / pooling geometry does not yield an integer output size."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # arithmetic sugar; every operator dispatches to a recorded op below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the record is topologically
    ordered by construction. :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> int:
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that
        requires grad. Returns the number of nodes visited."""
        if seed is None:
            if root.data.size != 1:
                raise ShapeError(f"backward from non-scalar of shape {root.shape} needs a seed")
            seed = np.ones_like(root.data)
        grads: dict[int, np.ndarray] = {id(root): np.asarray(seed, dtype=np.float64)}
        tensors: dict[int, Tensor] = {id(root): root}
        visited = 0
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            visited += 1
            for inp, ig in zip(node.inputs, node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + ig if key in grads else ig
                tensors[key] = inp
        # whatever is left was not produced on this tape: leaves
        for key, g in grads.items():
            t = tensors[key]
            if t.requires_grad:
                t.grad = np.array(g) if t.grad is None else t.grad + g
        return visited


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(data: np.ndarray, inputs: Iterable[Tensor], backward: BackwardFn, op: str = "custom") -> Tensor:
    """Wrap a forward result and register ``backward`` on the active tape.

    ``backward`` maps the upstream gradient to one gradient (or ``None``) per
    input, in order. This is the extension point for non-standard derivative
    rules such as surrogate spike functions.
    """
    inputs = tuple(inputs)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(out, inputs, backward, op))
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return custom_op(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return custom_op(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return custom_op(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    return custom_op(
        a.data / b.data,
        (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return custom_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor, eps: float = EPS) -> Tensor:
    """Natural log of ``max(x, eps)``; no gradient where the floor is active."""
    floored = np.maximum(x.data, eps)
    live = x.data > eps
    return custom_op(np.log(floored), (x,), lambda g: (np.where(live, g / floored, 0.0),), "log")


def square(x: Tensor) -> Tensor:
    return custom_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def absolute(x: Tensor) -> Tensor:
    return custom_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return custom_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------- reductions / shape


def tsum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return custom_op(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis) / float(n)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return custom_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(xs))]

    return custom_op(out, xs, backward, "stack")


# ---------------------------------------------------------------- layers


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W.T + b`` for ``x`` [B, n], ``W`` [m, n], ``b`` [m]."""
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[1] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: incompatible shapes x{x.shape}, W{W.shape}, b{b.shape}")
    out = x.data @ W.data.T + b.data
    return custom_op(
        out,
        (x, W, b),
        lambda g: (g @ W.data, g.T @ x.data, g.sum(axis=0)),
        "affine",
    )


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise GeometryError(
            f"size {size} with kernel {kernel}, stride {stride}, padding {padding} "
            "does not give a positive integer output size"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # [B, C, Hp, Wp] -> [B, C, k, k, ho, wo] view
    B, C, _, _ = x.shape
    sb, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(B, C, k, k, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [B, C_in, H, W] with ``kernel`` [C_out, C_in, K, K]."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1] or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d: incompatible shapes x{x.shape}, kernel{kernel.shape}")
    B, C, H, W = x.shape
    co, _, k, _ = kernel.shape
    ho = conv_output_size(H, k, stride, padding)
    wo = conv_output_size(W, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(np.ascontiguousarray(xp), k, stride, ho, wo)
    out = np.einsum("bcijyx,ocij->boyx", cols, kernel.data, optimize=True)
    inputs = [x, kernel]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)

    def backward(g):
        gk = np.einsum("boyx,bcijyx->ocij", g, cols, optimize=True)
        gcols = np.einsum("boyx,ocij->bcijyx", g, kernel.data, optimize=True)
        gxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return custom_op(out, inputs, backward, "conv2d")


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if H % size or W % size:
        raise GeometryError(f"avg_pool2d: {H}x{W} is not divisible by pool size {size}")
    out = x.data.reshape(B, C, H // size, size, W // size, size).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size),)

    return custom_op(out, (x,), backward, "avg_pool2d")


# ---------------------------------------------------------------- probabilities and losses


def softmax(z: Tensor) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return custom_op(p, (z,), backward, "softmax")


def cross_entropy(probs: Tensor, labels, eps: float = EPS) -> Tensor:
    """Batch mean of ``-ln probs[i, labels[i]]``; probabilities floored at ``eps``."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = probs.shape
    if labels.shape != (B,):
        raise ShapeError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for batch of {B}")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"cross_entropy: labels must lie in [0, {C})")
    rows = np.arange(B)
    picked = probs.data[rows, labels]
    floored = np.maximum(picked, eps)

    def backward(g):
        grad = np.zeros_like(probs.data)
        grad[rows, labels] = np.where(picked > eps, -g / (B * floored), 0.0)
        return (grad,)

    return custom_op(-np.log(floored).mean(), (probs,), backward, "cross_entropy")


def kl_divergence(p: Tensor, q: Tensor, eps: float = EPS) -> Tensor:
    """Batch mean of ``sum_c p ln(p/q)`` (nats); zero-probability ``p`` terms vanish."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise ShapeError(f"kl_divergence: shape mismatch {p.shape} vs {q.shape}")
    per_row = (p * (log(p, eps) - log(q, eps))).sum(axis=-1)
    return per_row.mean()


# ---------------------------------------------------------------- gradient checking


def grad_check(f: Callable[[], Tensor], params: Tensor | Sequence[Tensor], h: float = 1e-4, floor: float = 1e-6) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` recomputes the scalar from the current ``params`` data. The relative
    error per coordinate is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    coordinates whose true gradient is zero from dividing roundoff by zero.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = f()
        tape.backward(out)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
