"""Dense float64 tensors and a dynamic reverse-mode tape.

A :class:`Tape` records every operation applied to tensors that live on it,
in execution order, so the recorded list is already a topological order.
Tensors that belong to no tape are constants: operations on them run
eagerly and nothing is recorded, which is how inference paths avoid the
bookkeeping cost.

Typical use::

    tape = Tape()
    w = tape.leaf("w", np.ones((3, 2)))
    loss = (x @ w).sum()
    grads = backward(tape, loss)   # {"w": ndarray}

Tie-breaking in every max/argmax is lowest index. Exponentials clamp their
argument at ``EXP_FLOOR`` so nothing goes denormal.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

EXP_FLOOR = -700.0

Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: tuple, vjp: Optional[Vjp]):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Single-writer record of operations plus the named leaves they start from."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.parameters: Dict[str, Tensor] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, name: str, value) -> "Tensor":
        if name in self.parameters:
            raise ContractError(f"leaf {name!r} already exists on this tape")
        data = np.array(value, dtype=np.float64, copy=True)
        if not np.isfinite(data).all():
            raise NumericError(f"leaf {name!r} has non-finite entries")
        t = self._record("leaf", (), data, None)
        self.parameters[name] = t
        return t

    def leaves(self, params: Dict[str, np.ndarray]) -> Dict[str, "Tensor"]:
        return {k: self.leaf(k, v) for k, v in params.items()}

    def _record(self, op, inputs, data, vjp) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.tape = self
        t.idx = len(self.nodes)
        self.nodes.append(_Node(op, inputs, vjp))
        return t


class Tensor:
    """A float64 array, optionally attached to a tape."""

    __slots__ = ("data", "tape", "idx")
    __array_priority__ = 100

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = None
        self.idx = -1

    def __repr__(self):
        where = "const" if self.tape is None else f"node {self.idx}"
        return f"Tensor(shape={self.shape}, {where})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, inputs: tuple, data: np.ndarray, vjp: Vjp) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ContractError(f"{op}: inputs live on different tapes")
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    if tape is None:
        return Tensor(data)
    return tape._record(op, inputs, data, vjp)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _apply("add", (a, b), a.data + b.data,
                  lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _apply("sub", (a, b), a.data - b.data,
                  lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _apply("mul", (a, b), ad * bd,
                  lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _apply("div", (a, b), out,
                  lambda g: (unbroadcast(g / bd, ad.shape),
                             unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply("neg", (a,), -a.data, lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    live = a.data > EXP_FLOOR
    out = np.exp(np.maximum(a.data, EXP_FLOOR))
    return _apply("exp", (a,), out, lambda g: (g * out * live,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NumericError("log of a non-positive value")
    ad = a.data
    return _apply("log", (a,), np.log(ad), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if (a.data < 0).any():
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _apply("sqrt", (a,), out, lambda g: (g * 0.5 / np.where(out > 0, out, np.inf),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _apply("square", (a,), ad * ad, lambda g: (2.0 * g * ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _apply("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _apply("abs", (a,), np.abs(a.data), lambda g: (g * s,))


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; where the floor is active the value is a constant (zero gradient)."""
    a = as_tensor(a)
    live = a.data >= floor
    return _apply("clamp_min", (a,), np.maximum(a.data, floor), lambda g: (g * live,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # batched activations times a weight matrix: fold the batch into rows
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def vjp(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return _apply("matmul", (a, b), out, vjp)

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _apply("matmul", (a, b), ad @ bd, vjp)


# ---------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _apply("sum", (a,), np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) / float(count)


def max_over_time(a, axis: int = -1) -> Tensor:
    """Maximum along ``axis`` (time by default); gradient goes to the first argmax only."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"max_over_time: empty time axis in shape {a.shape}")
    arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _apply("max_over_time", (a,), np.squeeze(out, axis), vjp)


def softmax(a, temperature: float = 1.0, axis: int = -1) -> Tensor:
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    a = as_tensor(a)
    s = a.data / temperature
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(np.maximum(s, EXP_FLOOR))
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)) / temperature,)

    return _apply("softmax", (a,), p, vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    s = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(np.maximum(s, EXP_FLOOR)).sum(axis=axis, keepdims=True))
    out = s - lse
    p = np.exp(out)
    return _apply("log_softmax", (a,), out,
                  lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _apply("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _apply("transpose", (a,), np.transpose(a.data, axes),
                  lambda g: (np.transpose(g, inv),))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(idx)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _apply("getitem", (a,), np.array(a.data[idx], dtype=np.float64), vjp)


def unfold(a, width: int) -> Tensor:
    """Sliding windows along the last axis: ``[..., L]`` -> ``[..., L - width + 1, width]``."""
    a = as_tensor(a)
    L = a.shape[-1]
    if not 1 <= width <= L:
        raise DimensionError(f"unfold: window {width} does not fit length {L}")
    n_win = L - width + 1
    idx = np.arange(n_win)[:, None] + np.arange(width)[None, :]
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        for j in range(width):
            full[..., j:j + n_win] += g[..., j]
        return (full,)

    return _apply("unfold", (a,), a.data[..., idx], vjp)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _apply("concat", ts, np.concatenate([t.data for t in ts], axis=axis),
                  lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    n = len(ts)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _apply("stack", ts, np.stack([t.data for t in ts], axis=axis), vjp)


# ---------------------------------------------------------------- differentiation


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every named leaf on ``tape``.

    Leaves the loss does not depend on get a zero array of their own shape.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ContractError("loss must be a tensor recorded on the given tape")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[loss.idx] = np.ones(loss.shape)
    for i in range(loss.idx, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp.tape is None or gi is None:
                continue
            j = inp.idx
            grads[j] = gi if grads[j] is None else grads[j] + gi
    out = {}
    for name, leaf in tape.parameters.items():
        g = grads[leaf.idx]
        out[name] = np.zeros(leaf.shape) if g is None else np.array(g, dtype=np.float64).reshape(leaf.shape)
    return out


def grad_check(f: Callable[[Dict[str, Tensor]], Tensor], params: Dict[str, np.ndarray],
               eps: float = 1e-5, entries: Optional[int] = None, seed: int = 0) -> float:
    """Largest ``|analytic - central difference| / max(1, |central difference|)``.

    ``f`` maps a dict of tensors to a scalar tensor. It is called once on a
    tape for the analytic gradient, then on constants for each perturbation,
    so anything ``f`` solves internally (e.g. a transport plan) is re-solved
    at every perturbed point. ``entries`` caps the number of checked entries
    per parameter, drawn at random with ``seed``.
    """
    if not 0 < eps <= 1e-2:
        raise ParameterError(f"eps must lie in (0, 1e-2], got {eps}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    analytic = backward(tape, f(tape.leaves(params)))
    rng = np.random.default_rng(seed)

    def value(p):
        v = f({k: Tensor(x) for k, x in p.items()}).item()
        if not np.isfinite(v):
            raise NumericError("grad_check: objective is non-finite at a perturbed point")
        return v

    worst = 0.0
    for name, arr in params.items():
        flat_idx = np.arange(arr.size)
        if entries is not None and arr.size > entries:
            flat_idx = np.sort(rng.choice(arr.size, entries, replace=False))
        for fi in flat_idx:
            ix = np.unravel_index(fi, arr.shape)
            orig = arr[ix]
            arr[ix] = orig + eps
            up = value(params)
            arr[ix] = orig - eps
            down = value(params)
            arr[ix] = orig
            fd = (up - down) / (2 * eps)
            a = analytic[name][ix]
            if not np.isfinite(a):
                raise NumericError(f"grad_check: non-finite analytic gradient for {name}")
            worst = max(worst, abs(a - fd) / max(1.0, abs(fd)))
    return worst
