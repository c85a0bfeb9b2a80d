"""Dense tensors with tape-based reverse-mode differentiation.

All model math runs through the small op set in this module.  A Tensor
wraps a row-major numpy array (float32 for training, float64 for
verification) plus a ``requires_grad`` flag.  While a :class:`Tape` is
active, every op whose inputs require gradients records a pullback
closure; :func:`backward` replays the tape in reverse to produce leaf
gradients.  Every forward result is checked for NaN/Inf and rejected
immediately rather than letting bad values propagate.

There is no GPU path, no operator fusion, and only the broadcasting the
model actually needs (scalars and single-row biases).
"""

from __future__ import annotations

import numpy as np

STD_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """A tensor came out of an op containing NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: empty/detached backward, or a second backward pass."""


_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_TYPES:
        arr = arr.astype(np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """Row-major numeric array; treat the wrapped data as immutable."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor contains NaN/Inf")
        self.requires_grad = bool(requires_grad)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Constant copy of this tensor, cut off from any tape."""
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; scalars are wrapped as constants of matching dtype
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


class _Node:
    __slots__ = ("out", "parents", "pullback")

    def __init__(self, out, parents, pullback):
        self.out = out
        self.parents = parents
        self.pullback = pullback


class Tape:
    """Append-only record of forward ops, consumed by one backward pass.

    Used as a context manager; ops record themselves onto the innermost
    active tape.  Create a fresh tape per training step.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)


_ACTIVE: list[Tape] = []


def _record(out: Tensor, parents: tuple[Tensor, ...], pullback) -> Tensor:
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1]._nodes.append(_Node(out, parents, pullback))
    return out


def backward(tape: Tape, root: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` from scalar ``root``.

    Returns gradients for every ``requires_grad`` leaf reached from the
    root.  The tape may be consumed once only.
    """
    if root.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if tape._spent:
        raise TapeError("tape already consumed by a previous backward pass")
    if not tape._nodes:
        if root.requires_grad:
            return {root: np.ones_like(root.data)}
        raise TapeError("backward on an empty or detached tape")
    tape._spent = True

    produced = {id(node.out) for node in tape._nodes}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    holders: dict[int, Tensor] = {id(root): root}

    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.pullback(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
                holders[pid] = parent

    return {
        holders[pid]: g for pid, g in grads.items() if pid not in produced
    }


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary_forward(a: Tensor, b: Tensor, fn, name: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(_binary_forward(a, b, np.add, "add"))
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(_binary_forward(a, b, np.subtract, "sub"))
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(_binary_forward(a, b, np.multiply, "mul"))
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(_binary_forward(a, b, np.divide, "div"))
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record(
        out,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects rank 2, got shape {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.T))
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g.T),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError as exc:
        raise ShapeError(
            f"concat axis {axis}: shapes {[t.shape for t in tensors]}"
        ) from exc
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def pull(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), pull)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"slice_rows expects rank 2, got shape {a.shape}")
    out = Tensor(a.data[start:stop].copy())

    def pull(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record(out, (a,), pull)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"slice_cols expects rank 2, got shape {a.shape}")
    out = Tensor(a.data[:, start:stop].copy())

    def pull(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _record(out, (a,), pull)


def slice_axis0(a: Tensor, index: int) -> Tensor:
    """One slice along the leading axis, rank reduced by one."""
    if a.ndim < 1 or not (0 <= index < a.data.shape[0]):
        raise ShapeError(f"slice_axis0 index {index} of shape {a.shape}")
    out = Tensor(a.data[index].copy())

    def pull(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(out, (a,), pull)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ids (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows expects rank 2 table, got {table.shape}")
    if ids.ndim != 1:
        raise ShapeError(f"gather_rows expects flat ids, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"gather_rows: id out of range for table with {table.data.shape[0]} rows"
        )
    out = Tensor(table.data[ids].copy())

    def pull(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _record(out, (table,), pull)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def pull(g):
        if axis is None:
            return (np.full_like(a.data, float(g.reshape(-1)[0])),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _record(out, (a,), pull)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.data.shape[axis]
    out = Tensor(np.mean(a.data, axis=axis, keepdims=keepdims))

    def pull(g):
        if axis is None:
            return (np.full_like(a.data, float(g.reshape(-1)[0]) / count),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy() / count,)

    return _record(out, (a,), pull)


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximum."""
    out = Tensor(np.max(a.data, axis=axis, keepdims=keepdims))
    idx = np.argmax(a.data, axis=axis)
    mask = np.zeros_like(a.data)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis)

    def pull(g):
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (mask * g2,)

    return _record(out, (a,), pull)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(floor, x) elementwise; gradient is zero wherever the floor wins."""
    out = Tensor(np.maximum(a.data, floor))
    mask = (a.data > floor).astype(a.data.dtype)
    return _record(out, (a,), lambda g: (g * mask,))


def clamp_max(a: Tensor, ceiling: float) -> Tensor:
    """min(ceiling, x) elementwise; gradient is zero wherever the ceiling wins."""
    out = Tensor(np.minimum(a.data, ceiling))
    mask = (a.data < ceiling).astype(a.data.dtype)
    return _record(out, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data))
    return _record(out, (a,), lambda g: (g / (2.0 * out.data),))


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    pos = x >= 0
    s = np.empty_like(x)
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor (stable, shift-invariant)."""
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank 2, got shape {a.shape}")
    if a.size == 0:
        raise ShapeError("softmax_rows on an empty tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def pull(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), pull)


def std_rows(a: Tensor, eps: float = STD_EPS) -> Tensor:
    """Per-row population standard deviation, sqrt(var + eps), shape (n, 1).

    The epsilon keeps the op differentiable at zero variance.
    """
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"std_rows expects non-empty rank 2, got shape {a.shape}")
    m = tmean(a, axis=1, keepdims=True)
    centered = sub(a, m)
    var = tmean(mul(centered, centered), axis=1, keepdims=True)
    return sqrt(add(var, _wrap(eps, a)))


def grad_check(f, params: dict[str, Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the parameter dict to a scalar Tensor and must be pure.
    Use float64 parameters; the error is
    ``max |analytic - numeric| / max(1, |analytic|)`` over coordinates.
    """
    with Tape() as tape:
        out = f(params)
    if out.size != 1:
        raise ShapeError(f"grad_check target must be scalar, got {out.shape}")
    if tape._nodes:
        leaf_grads = backward(tape, out)
    else:
        leaf_grads = {}
    analytic = {
        name: leaf_grads.get(p, np.zeros_like(p.data)) for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(params).item()
            flat[i] = orig - h
            f_minus = f(params).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(ana[i] - numeric) / max(1.0, abs(ana[i]))
            if err > worst:
                worst = err
    return worst
