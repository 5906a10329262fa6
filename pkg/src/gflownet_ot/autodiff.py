"""Small reverse-mode autodiff over dense float64 numpy arrays.

Every op records a closure that pushes the upstream gradient into its inputs.
``grad`` walks the tape in reverse topological order, each node once, and
then clears the accumulators so the same leaves can be reused for the next
forward pass.  A graph can be differentiated once; a second ``grad`` on the
same loss without rebuilding it raises ``GraphConsumedError``.
"""

from __future__ import annotations

import numpy as np

LOG_FLOOR = -60.0


class NonFiniteError(FloatingPointError):
    """Raised when a forward value or a gradient contains NaN or +inf."""


class GraphConsumedError(RuntimeError):
    pass


def _check(value, op):
    # -inf is the sentinel for masked log-probabilities; everything else must be finite.
    if not np.isfinite(value).all() and (np.isnan(value).any() or np.isposinf(value).any()):
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    __slots__ = ("value", "requires_grad", "_parents", "_backward", "_op", "_grad", "_consumed")

    def __init__(self, value, requires_grad=False, _parents=(), _op="leaf"):
        value = np.asarray(value, dtype=np.float64)
        _check(value, _op)
        self.value = value
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self._op = _op
        self._grad = None
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        if exponent != 2:
            raise NotImplementedError("only squaring is supported")
        return square(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, op, backward):
    out = Tensor(value, _parents=tuple(parents), _op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _acc(t, g):
    if not t.requires_grad:
        return
    t._grad = g if t._grad is None else t._grad + g


# primitive ops --------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _node(a.value + b.value, (a, b), "add", backward)


def neg(a):
    def backward(g):
        _acc(a, -g)

    return _node(-a.value, (a,), "neg", backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _acc(a, _unbroadcast(g * b.value, a.shape))
        _acc(b, _unbroadcast(g * a.value, b.shape))

    return _node(a.value * b.value, (a, b), "mul", backward)


def square(a):
    def backward(g):
        _acc(a, 2.0 * a.value * g)

    return _node(a.value * a.value, (a,), "square", backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")

    def backward(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    return _node(a.value @ b.value, (a, b), "matmul", backward)


def exp(a):
    out_value = np.exp(a.value)

    def backward(g):
        _acc(a, g * out_value)

    return _node(out_value, (a,), "exp", backward)


def log(a):
    if (a.value <= 0).any():
        raise NonFiniteError("log of a non-positive value")

    def backward(g):
        _acc(a, g / a.value)

    return _node(np.log(a.value), (a,), "log", backward)


def leaky_relu(a, slope=0.01):
    scale = np.where(a.value > 0, 1.0, slope)

    def backward(g):
        _acc(a, g * scale)

    return _node(a.value * scale, (a,), "leaky_relu", backward)


def tsum(a, axis=None):
    def backward(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.shape).copy())
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node(a.value.sum(axis=axis), (a,), "sum", backward)


def mean(a):
    return tsum(a) * (1.0 / a.value.size)


def reshape(a, shape):
    def backward(g):
        _acc(a, g.reshape(a.shape))

    return _node(a.value.reshape(shape), (a,), "reshape", backward)


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        _acc(a, full)

    return _node(a.value[index], (a,), "getitem", backward)


def take(a, flat_index):
    """Gather from the flattened tensor; ``flat_index`` may have any shape."""
    flat_index = np.asarray(flat_index, dtype=np.intp)

    def backward(g):
        full = np.zeros(a.value.size)
        np.add.at(full, flat_index.ravel(), g.ravel())
        _acc(a, full.reshape(a.shape))

    return _node(a.value.ravel()[flat_index], (a,), "take", backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _acc(t, piece)

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tensors, "concat", backward)


def where(cond, a, b):
    """Elementwise select with a constant boolean condition."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _acc(a, _unbroadcast(np.where(cond, g, 0.0), a.shape))
        _acc(b, _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _node(np.where(cond, a.value, b.value), (a, b), "where", backward)


def minimum(a, b):
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    return where(a.value <= b.value, a, b)


def floor_clamp(a, floor=LOG_FLOOR):
    """max(a, floor).  Entries at or below the floor get no gradient; -inf maps to the floor."""
    above = a.value > floor
    value = np.where(above, a.value, floor)

    def backward(g):
        _acc(a, np.where(above, g, 0.0))

    return _node(value, (a,), "floor_clamp", backward)


def masked_log_softmax(logits, mask):
    """Row-wise log-softmax restricted to ``mask``; masked entries are -inf with zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ValueError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    if not mask.any(axis=-1).all():
        raise ValueError("every row of the mask needs at least one valid entry")
    x = np.where(mask, logits.value, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_value = shifted - lse
    probs = np.where(mask, np.exp(out_value), 0.0)

    def backward(g):
        g = np.where(mask, g, 0.0)
        _acc(logits, g - probs * g.sum(axis=-1, keepdims=True))

    return _node(out_value, (logits,), "masked_log_softmax", backward)


# backward pass --------------------------------------------------------------

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss, params):
    """Return d loss / d param for each param, as numpy arrays.

    Raises ValueError for a non-scalar loss or a param the loss does not
    depend on, and GraphConsumedError when the graph was already
    differentiated.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    order = _topo(loss)
    if any(n._consumed for n in order):
        raise GraphConsumedError("backward already ran on this graph; rebuild it with a new forward pass")
    ids = {id(n) for n in order}
    for i, p in enumerate(params):
        if id(p) not in ids:
            raise ValueError(f"parameter {i} does not take part in the loss graph")
    for n in order:
        n._grad = None
    loss._grad = np.ones_like(loss.value)
    try:
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)
                if node is not loss and node._parents:
                    node._grad = None
        grads = []
        for p in params:
            g = p._grad if p._grad is not None else np.zeros_like(p.value)
            _check(g, "backward")
            if np.isneginf(g).any():
                raise NonFiniteError("gradient contains -inf")
            grads.append(g)
    finally:
        for n in order:
            n._grad = None
            if n._parents:
                n._consumed = True
    return grads
