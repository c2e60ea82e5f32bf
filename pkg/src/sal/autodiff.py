"""Minimal define-by-run reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record every operation on a :class:`Tape`.
Leading axes are treated as batch axes wherever that is natural, so a whole
minibatch flows through one tape instead of one tape per sample.

Kinks follow the zero-subgradient convention: ``relu'(0) = 0`` and
``|.|'(0) = 0``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "linear",
    "relu",
    "strong_nonlinearity",
    "strong_nonlinearity_derivative",
    "abs_val",
    "concat",
    "add",
    "sub",
    "mul",
    "scale",
    "power",
    "exp",
    "sum_all",
    "mean",
    "take_rows",
    "backward",
]

PHI_KINDS = ("identity", "tanh_linear")


class Tensor:
    """A value recorded on a tape."""

    __slots__ = ("data", "tape", "index", "requires_grad", "name")

    def __init__(self, data, tape: "Tape", index: int, requires_grad: bool, name=None):
        self.data = data
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.index})"

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

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op, inputs, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of operations; node ids are topologically sorted.

    Parameters are leaves created with :meth:`parameter`; :func:`backward`
    returns their gradients keyed by name.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[_Node] = []
        self.params: dict[str, int] = {}
        # only shapes are kept so tensors never form reference cycles with the tape
        self._param_meta: dict[int, tuple] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, op, data, inputs: Sequence[Tensor], vjp, requires_grad=None, name=None):
        if requires_grad is None:
            requires_grad = any(t.requires_grad for t in inputs)
        idx = len(self.nodes)
        self.nodes.append(_Node(op, tuple(t.index for t in inputs), vjp if requires_grad else None))
        return Tensor(data, self, idx, requires_grad, name)

    def parameter(self, value, name: str) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        data = np.array(value, dtype=self.dtype)
        t = self._record("param", data, (), None, requires_grad=True, name=name)
        self.params[name] = t.index
        self._param_meta[t.index] = (data.shape, data.dtype)
        return t

    def constant(self, value) -> Tensor:
        return self._record("const", np.asarray(value, dtype=self.dtype), (), None, requires_grad=False)

    def lift(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise ValueError("tensor belongs to a different tape")
            return x
        return self.constant(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one argument must be a Tensor")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def linear(W, x, b) -> Tensor:
    """Affine map ``W x + b`` applied to the last axis of ``x``.

    ``W`` may be a matrix (m, n) giving output (..., m), or a vector (n,)
    giving a scalar per batch row.
    """
    tape = _tape_of(W, x, b)
    W, x, b = tape.lift(W), tape.lift(x), tape.lift(b)
    if W.ndim not in (1, 2):
        raise ValueError(f"W must be rank 1 or 2, got shape {W.shape}")
    n_in = W.shape[-1]
    if x.ndim < 1 or x.shape[-1] != n_in:
        raise ValueError(f"shape mismatch: W {W.shape} cannot act on x {x.shape}")
    m_shape = W.shape[:-1]
    if b.shape != m_shape:
        raise ValueError(f"shape mismatch: bias {b.shape} for output {m_shape}")
    Wd, xd = W.data, x.data
    out = xd @ Wd.T + b.data if Wd.ndim == 2 else xd @ Wd + b.data

    def vjp(g):
        if Wd.ndim == 2:
            gx = g @ Wd
            gW = g.reshape(-1, Wd.shape[0]).T @ xd.reshape(-1, n_in)
            gb = g.reshape(-1, Wd.shape[0]).sum(axis=0)
        else:
            gx = np.multiply.outer(g, Wd)
            gW = np.tensordot(g, xd, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
            gb = np.asarray(g.sum())
        return gW, gx, gb

    return tape._record("linear", out, (W, x, b), vjp)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return x.tape._record("relu", np.where(mask, xd, 0.0), (x,), lambda g: (g * mask,))


def _check_phi(kind, gamma):
    if kind not in PHI_KINDS:
        raise ValueError(f"unknown nonlinearity {kind!r}; expected one of {PHI_KINDS}")
    if kind == "tanh_linear" and gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")


def strong_nonlinearity_value(a, kind="identity", gamma=0.0):
    _check_phi(kind, gamma)
    if kind == "identity":
        return a
    return np.tanh(a) + gamma * a


def strong_nonlinearity_derivative(a, kind="identity", gamma=0.0):
    _check_phi(kind, gamma)
    if kind == "identity":
        return np.ones_like(a)
    return 1.0 - np.tanh(a) ** 2 + gamma


def strong_nonlinearity(x: Tensor, kind: str = "identity", gamma: float = 0.0) -> Tensor:
    """Anti-symmetric output activation: ``a`` or ``tanh(a) + gamma a``."""
    _check_phi(kind, gamma)
    if kind == "identity":
        return x.tape._record("phi_identity", x.data, (x,), lambda g: (g,))
    d = strong_nonlinearity_derivative(x.data, kind, gamma)
    out = strong_nonlinearity_value(x.data, kind, gamma)
    return x.tape._record("phi_tanh_linear", out, (x,), lambda g: (g * d,))


def abs_val(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return x.tape._record("abs", np.abs(x.data), (x,), lambda g: (g * s,))


def concat(a, b) -> Tensor:
    """Concatenate along the last axis; leading (batch) axes must agree."""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return tape._record("concat", out, (a, b), lambda g: (g[..., :p], g[..., p:]))


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    sa, sb = a.shape, b.shape
    return tape._record(
        "add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    sa, sb = a.shape, b.shape
    return tape._record(
        "sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    ad, bd = a.data, b.data
    return tape._record(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return x.tape._record("scale", x.data * c, (x,), lambda g: (g * c,))


def power(x: Tensor, p: float) -> Tensor:
    """``x ** p`` for nonnegative ``x`` and ``p >= 1``."""
    p = float(p)
    if p < 1.0:
        raise ValueError(f"exponent must be >= 1, got {p}")
    if p == 1.0:
        return x.tape._record("pow1", x.data, (x,), lambda g: (g,))
    xd = x.data
    if np.any(xd < 0):
        raise ValueError("power expects a nonnegative base")
    d = p * np.power(xd, p - 1.0)
    return x.tape._record("pow", np.power(xd, p), (x,), lambda g: (g * d,))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return x.tape._record("exp", e, (x,), lambda g: (g * e,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    dt = x.data.dtype
    return x.tape._record(
        "sum", np.asarray(x.data.sum(), dtype=dt), (x,), lambda g: (np.broadcast_to(g, shape).astype(dt),)
    )


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    shape = x.shape
    dt = x.data.dtype
    return x.tape._record(
        "mean",
        np.asarray(x.data.sum() / n, dtype=dt),
        (x,),
        lambda g: (np.full(shape, g / n, dtype=dt),),
    )


def take_rows(x: Tensor, rows) -> Tensor:
    """Gather ``x[rows]``; the backward pass scatter-adds."""
    rows = np.asarray(rows, dtype=np.intp)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, rows, g)
        return (out,)

    return x.tape._record("take_rows", x.data[rows], (x,), vjp)


def backward(tape: Tape, root: Tensor) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``root``.

    Returns the gradient of ``root`` with respect to every registered
    parameter (zeros for parameters the root does not depend on).
    """
    if root.tape is not tape:
        raise ValueError("root belongs to a different tape")
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {root.index: np.ones_like(root.data)}
    nodes = tape.nodes
    for i in range(root.index, -1, -1):
        g = grads.get(i)
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        for j, gj in zip(node.inputs, node.vjp(g)):
            if nodes[j].vjp is None and nodes[j].op != "param":
                continue
            if j in grads:
                grads[j] = grads[j] + gj
            else:
                grads[j] = gj
    out = {}
    for name, idx in tape.params.items():
        shape, dtype = tape._param_meta[idx]
        g = grads.get(idx)
        out[name] = np.zeros(shape, dtype=dtype) if g is None else np.asarray(g, dtype=dtype).reshape(shape)
    return out


def gradient_function(fn: Callable[[Tape, dict], Tensor], params: dict, dtype=np.float64):
    """Evaluate ``fn`` on a fresh tape and return ``(value, grads)``."""
    tape = Tape(dtype)
    ts = {k: tape.parameter(v, k) for k, v in params.items()}
    root = fn(tape, ts)
    return float(root.data), backward(tape, root)
