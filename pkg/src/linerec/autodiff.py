"""Reverse-mode automatic differentiation over dense float64 tensors.

Every layer in the recognition network is composed from the primitives in
this module. Ops execute eagerly on numpy arrays; when an input requires a
gradient, the op records a backward closure on its result. `backward` walks
the recorded graph once in reverse topological order and accumulates into
`Tensor.grad`. The recording lives only as long as the result tensors, so a
training step builds a fresh graph and drops it after the parameter update.

No global state: independent graphs can be built from different threads as
long as they do not share tensors.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """Dense float64 array plus an optional gradient buffer.

    `data` is always a C-contiguous float64 ndarray; `grad`, once populated
    by `backward`, is an ndarray of identical shape. Repeated backward
    passes accumulate into `grad` until `zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

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
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the value with no graph attached."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; all semantics live in the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data) -> Tensor:
    """Trainable tensor (requires_grad=True)."""
    return Tensor(data, requires_grad=True)


def primitive(data: Array, parents: Sequence[Tensor],
              backward_fn: Callable[[Array], None]) -> Tensor:
    """Build an op result, recording `backward_fn` if any parent needs grads.

    `backward_fn` receives d(loss)/d(result) and must accumulate into the
    parents' grads via `accumulate_grad`. Modules defining fused primitives
    (convolution, CTC) use this directly.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def accumulate_grad(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Topologically ordered list of the tensors reachable from a root.

    Parents always precede children, so one reversed traversal visits each
    node exactly once during backpropagation.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Populate grads of every gradient-requiring tensor reachable from `loss`.

    `loss` must be a scalar (size-1) tensor. Grads accumulate across calls;
    call `zero_grad` on parameters between steps. Propagation itself is
    pass-local: grads already present on tape nodes are set aside and folded
    back in afterwards, so stale intermediate grads never feed the closures.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = Tape.from_root(loss)
    saved = [node.grad for node in tape.nodes]
    for node in tape.nodes:
        node.grad = None
    accumulate_grad(loss, np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node, old in zip(tape.nodes, saved):
        if old is not None:
            node.grad = old if node.grad is None else node.grad + old


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(g, b.data.shape))

    return primitive(data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(-g, b.data.shape))

    return primitive(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape))

    return primitive(data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g / b.data, a.data.shape))
        accumulate_grad(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return primitive(data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return primitive(-a.data, (a,), lambda g: accumulate_grad(a, -g))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return primitive(data, (a,), lambda g: accumulate_grad(a, g * data))


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return primitive(data, (a,), lambda g: accumulate_grad(a, g / a.data))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    return primitive(data, (a,), lambda g: accumulate_grad(a, g * 0.5 / data))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return primitive(data, (a,), lambda g: accumulate_grad(a, g * (1.0 - data * data)))


def _sigmoid_stable(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_stable(a.data)
    return primitive(data, (a,), lambda g: accumulate_grad(a, g * data * (1.0 - data)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return primitive(np.where(mask, a.data, 0.0), (a,),
                     lambda g: accumulate_grad(a, g * mask))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        gg = g
        if not keepdims and axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            shape = [1 if i in axes else n for i, n in enumerate(a.data.shape)]
            gg = g.reshape(shape)
        accumulate_grad(a, np.broadcast_to(gg, a.data.shape).copy())

    return primitive(data, (a,), backward_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        gg = g / count
        if not keepdims and axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            shape = [1 if i in axes else n for i, n in enumerate(a.data.shape)]
            gg = gg.reshape(shape)
        accumulate_grad(a, np.broadcast_to(gg, a.data.shape).copy())

    return primitive(data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# shape primitives


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    return primitive(data, (a,),
                     lambda g: accumulate_grad(a, g.reshape(a.data.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))
    return primitive(data, (a,),
                     lambda g: accumulate_grad(a, g.transpose(inv)))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            accumulate_grad(t, g[tuple(idx)])

    return primitive(data, tensors, backward_fn)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        accumulate_grad(a, full)

    return primitive(data, (a,), backward_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        for i, t in enumerate(tensors):
            accumulate_grad(t, np.take(g, i, axis=axis))

    return primitive(data, tensors, backward_fn)


# ---------------------------------------------------------------------------
# linear algebra and normalization


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul requires >=2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        accumulate_grad(a, _unbroadcast(ga, a.data.shape))
        accumulate_grad(b, _unbroadcast(gb, b.data.shape))

    return primitive(data, (a, b), backward_fn)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        accumulate_grad(a, (g - dot) * data)

    return primitive(data, (a,), backward_fn)


def log_softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse

    def backward_fn(g):
        accumulate_grad(a, g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return primitive(data, (a,), backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance,
    then apply the affine (gamma, beta)."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    m = mean(x, axis=-1, keepdims=True)
    d = sub(x, m)
    var = mean(mul(d, d), axis=-1, keepdims=True)
    xhat = div(d, sqrt(add(var, Tensor(eps))))
    return add(mul(xhat, gamma), beta)


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a deterministic scalar-valued function of `x` built from
    taped primitives. Error per component is
    |analytic - central| / max(1, |analytic|).
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    x.requires_grad = True
    x.zero_grad()
    backward(f(x))
    analytic = x.grad.reshape(-1).copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        fd = (fp - fm) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(analytic[i])))
    return worst
