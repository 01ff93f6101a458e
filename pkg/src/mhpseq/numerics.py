"""Dense float64 tensors with tape-based reverse-mode differentiation, and Adam.

A :class:`Graph` is a tape. Every operation on a tracked :class:`Tensor`
appends its output node to the tape of its inputs, so the tape is in
topological order by construction and :func:`backward` simply walks it in
reverse. Plain numpy arrays and floats mixed into an expression are treated
as constants.

    g = Graph()
    w = g.param("w", np.array(3.0))
    loss = w * w
    backward(g, loss)["w"]   # -> array(6.)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NonFiniteError

DTYPE = np.float64


def make_rng(seed, *keys):
    """Counter-based (Philox) generator for ``seed`` split along ``keys``.

    Keys may be ints or strings; the same (seed, keys) always yields the same
    stream, and distinct keys give independent streams.
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key)
    return int.from_bytes(str(key).encode("utf-8")[:16].ljust(16, b"\0"), "little")


def _check_finite(data, what):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Graph:
    """Tape of recorded operations.

    With ``record=False`` nothing is stored and :func:`backward` is
    unavailable; used for inference and loss-only evaluation.
    """

    def __init__(self, record=True):
        self.record = record
        self.nodes = []
        self.params = {}

    def param(self, name, value):
        if name in self.params:
            raise ContractViolation(f"parameter {name!r} registered twice")
        t = Tensor(value, graph=self, tracked=self.record, name=name)
        self.params[name] = t
        return t

    def const(self, value):
        return Tensor(value, graph=self)

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "graph", "parents", "vjp", "tracked", "name")
    # ndarray <op> Tensor must dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, graph=None, parents=(), vjp=None, tracked=False, name=None):
        data = np.asarray(data, dtype=DTYPE)
        self.data = data
        self.graph = graph
        self.parents = parents
        self.vjp = vjp
        self.tracked = tracked
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def numpy(self):
        return self.data

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def item(self):
        return float(self.data)

    __float__ = item

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x):
    """Underlying ndarray of a Tensor, or ``x`` itself as an array."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


def _graph_of(inputs):
    graph = None
    for t in inputs:
        if t.graph is not None:
            if graph is None:
                graph = t.graph
            elif t.graph is not graph:
                raise ContractViolation("tensors from different graphs combined")
    return graph


def _node(data, inputs, vjp, what):
    _check_finite(data, what)
    graph = _graph_of(inputs)
    tracked = graph is not None and graph.record and any(t.tracked for t in inputs)
    if not tracked:
        return Tensor(data, graph=graph)
    out = Tensor(data, graph=graph, parents=tuple(inputs), vjp=vjp, tracked=True)
    graph.nodes.append(out)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)),
                 "div")


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a):
    a = as_tensor(a)
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("log of non-positive value")
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def maximum(a, floor):
    """Elementwise max(a, floor) for a constant ``floor``; clamping."""
    a = as_tensor(a)
    x = a.data
    mask = x >= floor
    return _node(np.where(mask, x, floor), (a,), lambda g: (g * mask,), "maximum")


# -- linear algebra and reductions ------------------------------------------

def matmul(a, b):
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if bd.ndim != 2 or ad.ndim < 1 or ad.shape[-1] != bd.shape[0]:
        raise ContractViolation(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    def vjp(g):
        ga = g @ bd.T
        if ad.ndim == 1:
            gb = np.outer(ad, g)
        else:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(ad @ bd, (a, b), vjp, "matmul")


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in np.atleast_1d(axis)])
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, index):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _node(a.data[index], (a,), vjp, "getitem")


def _is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), vjp, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.data for t in ts], axis=axis), tuple(ts), vjp, "stack")


def softmax(logits, axis=-1):
    """Softmax with max-subtraction; accepts a Tensor or an array.

    Arrays in give arrays out; Tensors in give a differentiable Tensor.
    """
    if not isinstance(logits, Tensor):
        x = np.asarray(logits, dtype=DTYPE)
        _check_finite(x, "softmax input")
        z = np.exp(x - x.max(axis=axis, keepdims=True))
        return z / z.sum(axis=axis, keepdims=True)
    shift = logits.data.max(axis=axis, keepdims=True)
    z = exp(logits - shift)
    return z / reduce_sum(z, axis=axis, keepdims=True)


# -- differentiation --------------------------------------------------------

def backward(graph, loss):
    """Gradients of scalar ``loss`` for every parameter registered in ``graph``.

    Parameters the loss does not depend on get zero gradients.
    """
    if not graph.record:
        raise ContractViolation("graph was built without recording")
    if loss.data.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    _check_finite(loss.data, "loss")
    grads = {id(loss): np.ones_like(loss.data)}
    owned = set()  # ids whose gradient buffer is private and may be updated in place
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        owned.discard(id(node))
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.tracked:
                continue
            key = id(parent)
            if key not in grads:
                grads[key] = pg
            elif key in owned:
                grads[key] += pg
            else:
                grads[key] = grads[key] + pg
                owned.add(key)
    out = {}
    for name, p in graph.params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=DTYPE).reshape(p.shape)
    return out


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


# -- initialisation ---------------------------------------------------------

def uniform_init(rng, shape, fan_in):
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape).astype(DTYPE)


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=0.001):
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            learning_rate=learning_rate,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Inputs are not modified.
    """
    if set(grads) != set(params):
        raise ContractViolation("gradient keys do not match parameters")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_t = state.epsilon_num * np.sqrt(1.0 - b2 ** t)
    new_params, m1, m2 = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        _check_finite(g, f"gradient of {name}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        # lr*mhat/(sqrt(vhat)+eps) rewritten with the bias terms folded into lr_t, eps_t
        new_params[name] = p - lr_t * m / (np.sqrt(v) + eps_t)
        m1[name], m2[name] = m, v
    new_state = AdamState(m1, m2, t, state.learning_rate, b1, b2, state.epsilon_num)
    return new_params, new_state
