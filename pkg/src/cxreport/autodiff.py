"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is rebuilt on every forward pass (define-by-run).  Gradients
accumulate into ``Tensor.grad`` until explicitly zeroed, so running
``backward`` twice without a reset doubles them.  Broadcasting is limited to
scalar-against-tensor; everything richer is rejected so each gradient rule
stays auditable.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "NonFiniteError",
    "no_grad",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "relu",
    "elementwise",
    "matmul",
    "conv2d",
    "softmax",
    "log",
    "clamp_min",
    "concat",
    "narrow",
    "reshape",
    "reduce_mean",
    "reduce_sum",
    "avg_pool2d",
    "channel_affine",
    "pick",
    "column",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class NonFiniteError(ValueError):
    """An operation received non-finite values (diverged upstream state)."""


class no_grad:
    """Context manager that suppresses graph recording (evaluation mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus the operation record that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"


def _record(data, parents, backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    else:
        out._op = op
    return out


class Graph:
    """Operation records reachable from a root, in topological order.

    ``nodes`` lists every tensor on a path into the root; each node's parents
    appear before it, so one reverse sweep propagates all gradients and visits
    each node exactly once.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        return cls(nodes)

    def run_backward(self, seed: np.ndarray) -> None:
        root = self.nodes[-1]
        flowing: dict[int, np.ndarray] = {id(root): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = flowing.get(id(node))
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward_fn is None:
                continue
            parent_grads = node._backward_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flowing.get(id(parent))
                if acc is None:
                    flowing[id(parent)] = np.array(pg, dtype=np.float64, copy=True)
                else:
                    acc += pg


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to every requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError(f"backward seed must be scalar, got shape {loss.shape}")
    Graph.trace(loss).run_backward(np.ones_like(loss.data))


def zero_grad(tensors) -> None:
    for t in tensors.values() if isinstance(tensors, dict) else tensors:
        t.zero_grad()


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # same shape, or one side scalar (size 1)
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only scalar broadcast is supported)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # fold a full-shape gradient back onto a scalar operand
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(a.data * b.data, (a, b), bw, "mul")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        return (g * y * (1.0 - y),)

    return _record(y, (x,), bw, "sigmoid")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _record(y, (x,), bw, "tanh")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0.0), (x,), bw, "relu")


_ELEMENTWISE = {}


def elementwise(op_kind: str, *args) -> Tensor:
    """Dispatch a pointwise operation by name: sigmoid, tanh, relu, add, mul."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


_ELEMENTWISE.update({"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "add": add, "mul": mul})


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ValueError(f"matmul: expected 2-d by 1-d/2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")

    def bw(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), bw, "matmul")


def conv2d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate a (c_in, h, w) input with (c_out, c_in, k, k) kernels."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ValueError(f"conv2d: expected (c,h,w) input and (o,c,k,k) kernels, got {x.shape} and {kernels.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ValueError(f"conv2d: channel mismatch, input {x.shape} vs kernels {kernels.shape}")
    if kh != kw:
        raise ValueError(f"conv2d: kernels must be square, got {kernels.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride/padding ({stride}, {padding})")
    k = kh
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ValueError(f"conv2d: kernel {k}x{k} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # im2col: (c_in*k*k, oh*ow)
    cols = np.empty((c_in, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = padded[:, i : i + stride * oh : stride, j : j + stride * ow : stride]
    cols2 = cols.reshape(c_in * k * k, oh * ow)
    w2 = kernels.data.reshape(c_out, c_in * k * k)
    out = (w2 @ cols2).reshape(c_out, oh, ow)

    def bw(g):
        g2 = g.reshape(c_out, oh * ow)
        dk = (g2 @ cols2.T).reshape(kernels.shape)
        dcols = (w2.T @ g2).reshape(c_in, k, k, oh, ow)
        dpadded = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                dpadded[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, i, j]
        dx = dpadded[:, padding : padding + h, padding : padding + w] if padding else dpadded
        return dx, dk

    return _record(out, (x, kernels), bw, "conv2d")


def softmax(x) -> Tensor:
    """Normalized exponential of a vector, stabilized by max-subtraction."""
    x = _as_tensor(x)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"softmax: expected a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError("softmax: non-finite input")
    e = np.exp(x.data - np.max(x.data))
    y = e / np.sum(e)

    def bw(g):
        return (y * (g - np.dot(g, y)),)

    return _record(y, (x,), bw, "softmax")


def log(x) -> Tensor:
    x = _as_tensor(x)

    def bw(g):
        return (g / x.data,)

    return _record(np.log(x.data), (x,), bw, "log")


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x exceeds the floor."""
    x = _as_tensor(x)
    mask = x.data > floor

    def bw(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, floor), (x,), bw, "clamp_min")


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat: empty input")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bw(g):
        return tuple(
            np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw, "concat")


def narrow(x, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along the first axis."""
    x = _as_tensor(x)
    if not (0 <= start < stop <= x.shape[0]):
        raise ValueError(f"narrow: bad range [{start}, {stop}) for first extent {x.shape[0]}")

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[start:stop] = g
        return (dx,)

    return _record(x.data[start:stop].copy(), (x,), bw, "narrow")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _record(x.data.reshape(shape), (x,), bw, "reshape")


def reduce_mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.size

        def bw(g):
            return (np.full(x.shape, float(g) / n),)

        return _record(np.mean(x.data), (x,), bw, "mean")
    n = x.shape[axis]

    def bw_axis(g):
        return (np.expand_dims(g, axis).repeat(n, axis=axis) / n,)

    return _record(np.mean(x.data, axis=axis), (x,), bw_axis, "mean")


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:

        def bw(g):
            return (np.full(x.shape, float(g)),)

        return _record(np.sum(x.data), (x,), bw, "sum")

    def bw_axis(g):
        return (np.expand_dims(g, axis).repeat(x.shape[axis], axis=axis),)

    return _record(np.sum(x.data, axis=axis), (x,), bw_axis, "sum")


def avg_pool2d(x, k: int) -> Tensor:
    """Non-overlapping k-by-k average pooling over (c, h, w); trailing rows/cols are cropped."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"avg_pool2d: expected (c,h,w), got {x.shape}")
    c, h, w = x.shape
    oh, ow = h // k, w // k
    if oh < 1 or ow < 1:
        raise ValueError(f"avg_pool2d: window {k} larger than input {x.shape}")
    view = x.data[:, : oh * k, : ow * k].reshape(c, oh, k, ow, k)
    out = view.mean(axis=(2, 4))

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[:, : oh * k, : ow * k] = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
        return (dx,)

    return _record(out, (x,), bw, "avg_pool2d")


def channel_affine(x, scale, shift) -> Tensor:
    """Per-channel y[c, ...] = x[c, ...] * scale[c] + shift[c] (channel axis 0)."""
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    c = x.shape[0]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ValueError(
            f"channel_affine: scale/shift must be ({c},), got {scale.shape} and {shift.shape}"
        )
    expand = (c,) + (1,) * (x.ndim - 1)
    out = x.data * scale.data.reshape(expand) + shift.data.reshape(expand)
    spatial = tuple(range(1, x.ndim))

    def bw(g):
        dx = g * scale.data.reshape(expand)
        dscale = np.sum(g * x.data, axis=spatial) if spatial else g * x.data
        dshift = np.sum(g, axis=spatial) if spatial else g.copy()
        return dx, dscale, dshift

    return _record(out, (x, scale, shift), bw, "channel_affine")


def pick(x, index: int) -> Tensor:
    """Scalar element of a vector."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ValueError(f"pick: expected a vector, got shape {x.shape}")
    if not (0 <= index < x.shape[0]):
        raise ValueError(f"pick: index {index} out of range for extent {x.shape[0]}")

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return (dx,)

    return _record(x.data[index], (x,), bw, "pick")


def column(m, index: int) -> Tensor:
    """Column of a matrix (embedding lookup)."""
    m = _as_tensor(m)
    if m.ndim != 2:
        raise ValueError(f"column: expected a matrix, got shape {m.shape}")
    if not (0 <= index < m.shape[1]):
        raise ValueError(f"column: index {index} out of range for extent {m.shape[1]}")

    def bw(g):
        dm = np.zeros_like(m.data)
        dm[:, index] = g
        return (dm,)

    return _record(m.data[:, index].copy(), (m,), bw, "column")
