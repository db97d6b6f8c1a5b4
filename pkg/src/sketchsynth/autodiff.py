"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations execute eagerly on numpy and record graph nodes holding their
input/output tensors plus a local-gradient closure.  ``backward`` builds a
tape (the topological order of nodes reaching one scalar output), runs each
closure exactly once, accumulates gradients by summation, and releases the
graph afterwards so a stale backward is rejected instead of silently
returning partial gradients.

Broadcasting is deliberately restricted: two operands must have identical
shapes, or one shape must be a trailing suffix of the other (leading-batch
broadcast, which also covers scalars).  Anything else raises ``ShapeError``.
Every op checks its result for NaN/Inf and raises ``NonFiniteError`` naming
the op that produced it.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "NonFiniteError", "ShapeError",
    "tensor", "parameter", "as_tensor", "no_grad", "is_grad_enabled",
    "add", "sub", "mul", "div", "neg", "matmul",
    "exp", "log", "sqrt", "tanh", "sigmoid", "relu",
    "softmax", "logsumexp", "sum_", "mean",
    "reshape", "concat", "split", "stack",
    "backward", "grad_check", "grad_check_params",
]


class NonFiniteError(FloatingPointError):
    """NaN or Inf appeared in the inputs or output of an operation."""

    def __init__(self, op_name: str):
        super().__init__(f"non-finite values detected in op '{op_name}'")
        self.op_name = op_name


class ShapeError(ValueError):
    pass


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op)


def _contig(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d scalars to 1-d; avoid that
    return arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)


class Tensor:
    """Dense float64 array plus an optional position in the recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = _contig(np.asarray(data, dtype=np.float64))
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    """One recorded operation: inputs, outputs and a local-gradient closure."""

    __slots__ = ("op", "inputs", "outputs", "grad_fn", "released")

    def __init__(self, op, inputs, outputs, grad_fn):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.grad_fn = grad_fn
        self.released = False

    def release(self):
        self.released = True
        self.grad_fn = None
        self.inputs = ()
        self.outputs = ()


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._node is not None


def record(op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
           grad_fn: Callable) -> None:
    """Attach a graph node when recording is on and some input carries grad.

    ``grad_fn`` maps the tuple of output gradients (entries may be None) to a
    tuple of input gradients (None for inputs that need none).
    """
    if not is_grad_enabled():
        return
    if not any(_needs_grad(t) for t in inputs):
        return
    node = _Node(op, tuple(inputs), tuple(outputs), grad_fn)
    for out in outputs:
        out._node = node
        out.requires_grad = True


class Tape:
    """Topologically ordered nodes reaching one output tensor."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_output(cls, t: Tensor) -> "Tape":
        root = t._node
        if root is None:
            return cls([])
        order: list[_Node] = []
        visited: set[int] = set()
        stack: list[tuple[_Node, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            if node.released:
                raise RuntimeError(
                    f"graph through op '{node.op}' was already consumed by a "
                    "previous backward; re-run the forward pass")
            visited.add(id(node))
            stack.append((node, True))
            for inp in node.inputs:
                if inp._node is not None and id(inp._node) not in visited:
                    stack.append((inp._node, False))
        return cls(order)

    def run_backward(self, root: Tensor) -> None:
        root._accumulate(np.ones_like(root.data))
        for node in reversed(self.nodes):
            out_grads = tuple(o.grad for o in node.outputs)
            if any(g is not None for g in out_grads):
                in_grads = node.grad_fn(out_grads)
                for t, g in zip(node.inputs, in_grads):
                    if g is not None and _needs_grad(t):
                        t._accumulate(g)
            node.release()


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) into ``.grad`` of every reachable tensor.

    The loss must be a scalar produced by recorded operations.  Gradients sum
    into existing ``.grad`` values; zeroing between steps is the caller's job.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise RuntimeError("loss is not connected to any recorded operation")
    Tape.from_output(loss).run_backward(loss)


# ---------------------------------------------------------------------------
# broadcast helpers (leading-batch only)
# ---------------------------------------------------------------------------

def _suffix_of(small: tuple, big: tuple) -> bool:
    k = len(small)
    return k <= len(big) and big[len(big) - k:] == small


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if _suffix_of(a.shape, b.shape) or _suffix_of(b.shape, a.shape):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(shape: tuple, g: np.ndarray) -> np.ndarray:
    """Sum the leading broadcast axes of ``g`` away so it matches ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair("add", a, b)
    out_data = a.data + b.data
    _check_finite(out_data, "add")
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        return _reduce_to(a.shape, g), _reduce_to(b.shape, g)

    record("add", (a, b), (out,), grad_fn)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair("sub", a, b)
    out_data = a.data - b.data
    _check_finite(out_data, "sub")
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        return _reduce_to(a.shape, g), _reduce_to(b.shape, -g)

    record("sub", (a, b), (out,), grad_fn)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair("mul", a, b)
    out_data = a.data * b.data
    _check_finite(out_data, "mul")
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        return _reduce_to(a.shape, g * b.data), _reduce_to(b.shape, g * a.data)

    record("mul", (a, b), (out,), grad_fn)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    _check_finite(out_data, "div")
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        ga = _reduce_to(a.shape, g / b.data)
        gb = _reduce_to(b.shape, -g * out_data / b.data)
        return ga, gb

    record("div", (a, b), (out,), grad_fn)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(-a.data)
    record("neg", (a,), (out,), lambda gs: (-gs[0],))
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    with np.errstate(invalid="ignore"):
        out_data = a.data @ b.data
    _check_finite(out_data, "matmul")
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        return g @ b.data.T, a.data.T @ g

    record("matmul", (a, b), (out,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    _check_finite(out_data, "exp")
    out = Tensor._wrap(out_data)
    record("exp", (a,), (out,), lambda gs: (gs[0] * out_data,))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)
    _check_finite(out_data, "log")
    out = Tensor._wrap(out_data)
    record("log", (a,), (out,), lambda gs: (gs[0] / a.data,))
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)
    _check_finite(out_data, "sqrt")
    out = Tensor._wrap(out_data)
    record("sqrt", (a,), (out,), lambda gs: (gs[0] * 0.5 / out_data,))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    out = Tensor._wrap(out_data)
    record("tanh", (a,), (out,), lambda gs: (gs[0] * (1.0 - out_data * out_data),))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = _sigmoid(a.data)
    out = Tensor._wrap(out_data)
    record("sigmoid", (a,), (out,),
           lambda gs: (gs[0] * out_data * (1.0 - out_data),))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh formulation: one vector pass, saturates instead of overflowing
    return 0.5 * np.tanh(0.5 * x) + 0.5


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)
    out = Tensor._wrap(out_data)
    record("relu", (a,), (out,), lambda gs: (gs[0] * (a.data > 0.0),))
    return out


# ---------------------------------------------------------------------------
# softmax family and reductions
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    _check_finite(out_data, "softmax")
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    record("softmax", (a,), (out,), grad_fn)
    return out


def logsumexp(a, axis: int = -1) -> Tensor:
    """log(sum(exp(a), axis)), stabilized; gradient is softmax(a, axis)."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)
    _check_finite(out_data, "logsumexp")
    out = Tensor._wrap(_contig(out_data))
    soft = e / s

    def grad_fn(gs):
        (g,) = gs
        return (np.expand_dims(g, axis) * soft,)

    record("logsumexp", (a,), (out,), grad_fn)
    return out


def sum_(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        out_data = np.asarray(a.data.sum())
    else:
        out_data = a.data.sum(axis=axis)
    _check_finite(out_data, "sum")
    out = Tensor._wrap(_contig(out_data))

    def grad_fn(gs):
        (g,) = gs
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    record("sum", (a,), (out,), grad_fn)
    return out


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean over an empty axis")
    return mul(sum_(a, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = _contig(a.data.reshape(shape))
    out = Tensor._wrap(out_data)
    record("reshape", (a,), (out,),
           lambda gs: (gs[0].reshape(a.shape),))
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    out = Tensor._wrap(out_data)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(gs):
        (g,) = gs
        pieces = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(pieces)

    record("concat", ts, (out,), grad_fn)
    return out


def split(a, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(
            f"split: sizes {tuple(sizes)} do not cover axis {axis} of shape {a.shape}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for i in range(len(sizes)):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        outs.append(Tensor._wrap(np.ascontiguousarray(a.data[tuple(sl)])))

    def grad_fn(gs):
        parts = []
        for i, g in enumerate(gs):
            if g is None:
                shape = list(a.shape)
                shape[axis] = sizes[i]
                parts.append(np.zeros(shape))
            else:
                parts.append(g)
        return (np.concatenate(parts, axis=axis),)

    record("split", (a,), tuple(outs), grad_fn)
    return outs


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack of zero tensors")
    out_data = np.stack([t.data for t in ts], axis=axis)
    out = Tensor._wrap(out_data)

    def grad_fn(gs):
        (g,) = gs
        return tuple(_contig(piece.squeeze(axis))
                     for piece in np.split(g, len(ts), axis=axis))

    record("stack", ts, (out,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor and be deterministic.  The
    error at each coordinate is |analytic - fd| / max(1, |analytic|, |fd|).
    """
    x = x if isinstance(x, Tensor) else parameter(x)
    saved_grad, saved_flag = x.grad, x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise ShapeError(f"grad_check requires a scalar function, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad, x.requires_grad = saved_grad, saved_flag

    flat = x.data.ravel()
    fd = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data.reshape(()))
            flat[i] = orig - h
            fm = float(f(x).data.reshape(()))
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * h)
    a = analytic.ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(fd)))
    return float(np.max(np.abs(a - fd) / denom)) if flat.size else 0.0


def grad_check_params(f: Callable[[], Tensor], params: dict, h: float = 1e-5,
                      max_coords_per_tensor: int | None = None,
                      coord_rng=None) -> float:
    """grad_check over a named collection of parameters.

    ``f`` takes no arguments and reads the parameter tensors; returns the max
    relative error across the checked coordinates.  By default every
    coordinate of every parameter is checked; capping with
    ``max_coords_per_tensor`` checks a random subset per tensor (drawn from
    ``coord_rng``) for cheaper spot checks.
    """
    for p in params.values():
        p.grad = None
    out = f()
    if out.size != 1:
        raise ShapeError("grad_check_params requires a scalar function")
    backward(out)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    worst = 0.0
    with no_grad():
        for name, p in params.items():
            flat = p.data.ravel()
            a = analytic[name].ravel()
            if max_coords_per_tensor is None or flat.size <= max_coords_per_tensor:
                coords = range(flat.size)
            else:
                if coord_rng is None:
                    coord_rng = np.random.default_rng(0)
                coords = coord_rng.choice(flat.size, size=max_coords_per_tensor,
                                          replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data.reshape(()))
                flat[i] = orig - h
                fm = float(f().data.reshape(()))
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                err = abs(a[i] - fd) / max(1.0, abs(a[i]), abs(fd))
                worst = max(worst, err)
    for p in params.values():
        p.grad = None
    return worst
