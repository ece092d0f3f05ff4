"""Dense tensors with reverse-mode automatic differentiation.

numpy holds the values; every primitive records a backward closure on its
output, and `backward()` replays the closures in reverse topological order.
Training runs in float32, gradient checking in float64 (the dtype of a
tensor is simply the dtype of the array it wraps).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MASK_OFFSET = -1e9


def _size(shape: tuple) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _broadcastable(a: tuple, b: tuple) -> bool:
    """Equal shapes, a scalar (size-1) operand, or trailing-dimension
    broadcast; anything richer is rejected."""
    if a == b or _size(a) == 1 or _size(b) == 1:
        return True
    short, long = (a, b) if len(a) < len(b) else (b, a)
    if len(short) == len(long):
        return False
    return long[len(long) - len(short):] == short


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # remaining mismatches are size-1 dims kept by the op itself
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array that optionally participates in the gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents: Sequence[Tensor], op: str, backward: Callable) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, op=op,
                  parents=tuple(parents) if requires else (),
                  backward=backward if requires else None)


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    if not _broadcastable(a.shape, b.shape):
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not conform "
                         "(only equal, scalar or trailing-dimension broadcast)")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add", None)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub", None)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul", None)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not contract")
    out = _result(a.data @ b.data, (a, b), "matmul", None)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    out = _result(np.swapaxes(a.data, -1, -2), (a,), "transpose", None)

    def backward(g):
        a.accumulate(np.swapaxes(g, -1, -2))

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = _result(a.data.reshape(shape), (a,), "reshape", None)

    def backward(g):
        a.accumulate(g.reshape(a.shape))

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    out = _result(np.concatenate([t.data for t in tensors], axis=axis),
                  tensors, "concat", None)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t.accumulate(g[tuple(idx)])
            offset += n

    out._backward = backward
    return out


def getitem(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)
    out = _result(a.data[idx], (a,), "getitem", None)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accumulate(full)

    out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = _result(y, (a,), "sigmoid", None)

    def backward(g):
        a.accumulate(g * y * (1.0 - y))

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = _result(y, (a,), "tanh", None)

    def backward(g):
        a.accumulate(g * (1.0 - y * y))

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _result(np.maximum(a.data, 0.0), (a,), "relu", None)

    def backward(g):
        a.accumulate(g * (a.data > 0))

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    out = _result(y, (a,), "exp", None)

    def backward(g):
        a.accumulate(g * y)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _result(np.log(a.data), (a,), "log", None)

    def backward(g):
        a.accumulate(g / a.data)

    out._backward = backward
    return out


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", None)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape).copy())

    out._backward = backward
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    out = _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), "mean", None)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape) / count)

    out._backward = backward
    return out


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; gradient routed to the first maximal entry."""
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    argmax = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = _result(data, (a,), "max", None)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, argmax, g, axis)
        a.accumulate(full)

    out._backward = backward
    return out


def masked_softmax(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Exponential normalization over `axis`, giving masked entries weight 0.

    `mask` is a constant 0/1 array broadcastable to `a`; rows that are fully
    masked are rejected.
    """
    a = as_tensor(a)
    m = np.broadcast_to(np.asarray(mask, dtype=a.dtype), a.shape)
    if np.any(m.sum(axis=axis) == 0):
        raise ValueError("masked_softmax: at least one row is fully masked")
    z = a.data + (m - 1.0) * (-MASK_OFFSET)
    zmax = z.max(axis=axis, keepdims=True)
    e = np.exp(z - zmax) * m
    denom = e.sum(axis=axis, keepdims=True)
    y = e / denom
    out = _result(y, (a,), "masked_softmax", None)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        a.accumulate(y * (g - inner))

    out._backward = backward
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    zmax = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - zmax
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    soft = np.exp(y)
    out = _result(y, (a,), "log_softmax", None)

    def backward(g):
        a.accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    out._backward = backward
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; the gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    out = _result(table.data[ids], (table,), "embedding", None)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table.accumulate(full)

    out._backward = backward
    return out


def dropout(a: Tensor, keep_prob: float, rng: np.random.Generator,
            train: bool) -> Tensor:
    """Inverted dropout: scales by 1/keep at train time, identity at eval."""
    if not train or keep_prob >= 1.0:
        return a
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    mask = (rng.random(a.shape) < keep_prob).astype(a.dtype) / keep_prob
    return mul(a, constant(mask))


PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": concat,
    "getitem": getitem,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "max": reduce_max,
    "masked_softmax": masked_softmax,
    "log_softmax": log_softmax,
    "embedding": embedding,
    "dropout": dropout,
}


def apply_primitive(kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Dispatch a primitive by name; `attrs` become keyword arguments."""
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive {kind!r}")
    if kind == "concat":
        return concat(inputs, **(attrs or {}))
    return PRIMITIVES[kind](*inputs, **(attrs or {}))


# ---------------------------------------------------------------------------
# parameters and backward pass
# ---------------------------------------------------------------------------

@dataclass
class Parameter:
    """A named trainable tensor; `decay` opts it into L2 regularization."""
    name: str
    tensor: Tensor
    decay: bool = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


class ParamRegistry:
    """Creates and names parameters; names are unique and checkpoint-stable."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Parameter] = {}

    def _register(self, name: str, values: np.ndarray, decay: bool) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, Tensor(values.astype(self.dtype), requires_grad=True), decay)
        self.params[name] = p
        return p

    def xavier(self, name: str, shape: tuple, decay: bool = True,
               scale: float = 1.0) -> Parameter:
        fan_in, fan_out = shape[0], shape[-1]
        limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
        values = self.rng.uniform(-limit, limit, size=shape)
        return self._register(name, values, decay)

    def zeros(self, name: str, shape: tuple, decay: bool = False) -> Parameter:
        return self._register(name, np.zeros(shape), decay)

    def uniform(self, name: str, shape: tuple, low: float, high: float,
                decay: bool = True) -> Parameter:
        return self._register(name, self.rng.uniform(low, high, size=shape), decay)

    def trainable(self) -> list[Parameter]:
        return list(self.params.values())


def backward(loss: Tensor, parameters: Sequence[Parameter] | None = None):
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate into `.grad` of every reachable tensor that requires
    one. When `parameters` is given, returns {name: gradient array} with
    zeros for parameters the loss never touched.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if parameters is None:
        return None
    return {p.name: (p.tensor.grad if p.tensor.grad is not None
                     else np.zeros_like(p.tensor.data))
            for p in parameters}


def zero_grads(tensors):
    for t in tensors:
        if isinstance(t, Parameter):
            t.tensor.zero_grad()
        else:
            t.zero_grad()


def check_gradients(f: Callable, point, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar function against central
    finite differences, returning the max relative error over coordinates.

    `point` is a Tensor or list of Tensors with requires_grad set; evaluate
    in float64 or the comparison is meaningless.
    """
    points = [point] if isinstance(point, Tensor) else list(point)

    def run():
        out = f(*points) if len(points) > 1 else f(points[0])
        if out.size != 1:
            raise ValueError("check_gradients: f must be scalar-valued")
        return out

    zero_grads(points)
    loss = run()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in points]

    worst = 0.0
    for p, ana in zip(points, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(run().data)
            flat[i] = orig - epsilon
            lo = float(run().data)
            flat[i] = orig
            num = (hi - lo) / (2.0 * epsilon)
            a = float(ana.reshape(-1)[i])
            err = abs(a - num) / max(1e-7, abs(a) + abs(num))
            worst = max(worst, err)
    return worst
