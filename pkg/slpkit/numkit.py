#!/usr/bin/env python3

"""
Dense tensors with reverse-mode automatic differentiation, plus the Adam
optimizer.

Every operation in this module takes `Tensor` arguments and returns a new
`Tensor`.  If any argument depends on a `Parameter`, the result remembers its
arguments and how to propagate gradients back to them.  Calling `backward()`
on a scalar result walks this tape in reverse and accumulates gradients into
the `grad` array of every `Parameter` that was reached.  The tape is rebuilt
from scratch by every forward computation.

All math is done with 64-bit floats.  Broadcasting is deliberately limited to
adding a bias vector to every row of a matrix.
"""

import math
import autoprop
import numpy as np

from .errors import ShapeError, DegenerateRowError, OptimizerError
from .parser import Repr

DTYPE = np.float64

@autoprop
class Tensor(Repr):
    """
    An immutable array of 64-bit floats that knows how it was computed.
    """
    repr_attrs = ['shape']

    def __init__(self, data):
        self._init(np.array(data, dtype=DTYPE))

    @classmethod
    def _from_op(cls, data, parents, backward):
        self = cls.__new__(cls)
        self._init(np.asarray(data, dtype=DTYPE), parents, backward)
        return self

    def _init(self, data, parents=(), backward=None, param=None):
        if 0 in data.shape:
            raise ShapeError(f"tensor dimensions must be positive, not {data.shape}")

        data.setflags(write=False)
        self._data = data
        self._param = param
        self._tracked = param is not None or any(x._tracked for x in parents)

        # Constants don't need to remember where they came from.
        self._parents = parents if self._tracked else ()
        self._backward = backward if self._tracked else None

    def get_data(self):
        return self._data

    def get_shape(self):
        return self._data.shape

    def get_ndim(self):
        return self._data.ndim

    def get_requires_grad(self):
        return self._tracked

    def item(self):
        return float(self._data)

    def numpy(self):
        return self._data.copy()


@autoprop
class Parameter(Repr):
    """
    A named, trainable tensor and the gradient accumulated for it.
    """
    repr_attrs = ['name', 'shape']

    def __init__(self, name, value):
        self.name = name
        self._value = None
        self.value = value
        self.grad = np.zeros(self.shape, dtype=DTYPE)

    def get_value(self):
        return self._value

    def set_value(self, data):
        if isinstance(data, Tensor):
            data = data.data
        data = np.array(data, dtype=DTYPE)

        if self._value is not None and data.shape != self.shape:
            raise ShapeError(f"can't assign shape {data.shape} to parameter '{self.name}' of shape {self.shape}")

        value = Tensor.__new__(Tensor)
        value._init(data, param=self)
        self._value = value

    def get_shape(self):
        return self._value.shape

    def get_size(self):
        return self._value.data.size

    def zero_grad(self):
        self.grad = np.zeros(self.shape, dtype=DTYPE)


class AdamState(Repr):
    repr_attrs = ['step']

    def __init__(self, shape):
        self.m = np.zeros(shape, dtype=DTYPE)
        self.v = np.zeros(shape, dtype=DTYPE)
        self.step = 0


def tensor(data):
    """
    Wrap the given data in a constant tensor.
    """
    return data if isinstance(data, Tensor) else Tensor(data)

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"can't multiply {a.shape} by {b.shape}")

    x, y = a.data, b.data

    def backward(g):
        return g @ y.T, x.T @ g

    return Tensor._from_op(x @ y, (a, b), backward)

def add(a, b):
    """
    Add two tensors of the same shape, or add a vector to every row of a
    matrix.
    """
    if a.shape == b.shape:
        def backward(g):
            return g, g

    elif a.ndim == 2 and b.shape == a.shape[-1:]:
        def backward(g):
            return g, g.sum(axis=0)

    else:
        raise ShapeError(f"can't add {b.shape} to {a.shape}")

    return Tensor._from_op(a.data + b.data, (a, b), backward)

def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"can't multiply {a.shape} and {b.shape} elementwise")

    x, y = a.data, b.data

    def backward(g):
        return g * y, g * x

    return Tensor._from_op(x * y, (a, b), backward)

def scale(a, factor):
    factor = float(factor)

    def backward(g):
        return g * factor,

    return Tensor._from_op(a.data * factor, (a,), backward)

def transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"can only transpose matrices, not {a.shape}")

    def backward(g):
        return g.T,

    return Tensor._from_op(a.data.T.copy(), (a,), backward)

def reshape(a, shape):
    shape = tuple(shape)
    if math.prod(shape) != a.data.size:
        raise ShapeError(f"can't reshape {a.shape} to {shape}")

    def backward(g):
        return g.reshape(a.shape),

    return Tensor._from_op(a.data.reshape(shape), (a,), backward)

def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("nothing to concatenate")

    try:
        out = np.concatenate([x.data for x in tensors], axis=axis)
    except ValueError as err:
        shapes = ', '.join(str(x.shape) for x in tensors)
        raise ShapeError(f"can't concatenate {shapes} along axis {axis}") from err

    splits = np.cumsum([x.shape[axis] for x in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tuple(tensors), backward)

def take(a, index):
    """
    Index a tensor like a numpy array, e.g. ``take(x, (slice(None), slice(0, 4)))``
    selects the first four columns of a matrix.
    """
    out = a.data[index]

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(grad, index, g)
        return grad,

    return Tensor._from_op(np.array(out), (a,), backward)

def embedding_lookup(table, ids):
    """
    Gather the rows of the given table, one per id.
    """
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be a matrix, not {table.shape}")
    if ids.size == 0:
        raise ShapeError("no ids to look up")

    n = table.shape[0]
    bad = ids[(ids < 0) | (ids >= n)]
    if bad.size:
        raise ShapeError(f"id {bad[0]} is out of range for an embedding table with {n} rows")

    return take(table, ids)

def gelu(x):
    # The tanh approximation, as in the original BERT code.
    c = math.sqrt(2 / math.pi)
    data = x.data
    u = c * (data + 0.044715 * data**3)
    t = np.tanh(u)

    def backward(g):
        du = c * (1 + 3 * 0.044715 * data**2)
        return g * (0.5 * (1 + t) + 0.5 * data * (1 - t**2) * du),

    return Tensor._from_op(0.5 * data * (1 + t), (x,), backward)

def sum_all(x):
    def backward(g):
        return np.full(x.shape, g, dtype=DTYPE),

    return Tensor._from_op(x.data.sum(), (x,), backward)

def softmax_lastdim(x):
    """
    Normalize the last dimension of the given tensor into probabilities.

    Entries of -inf (i.e. masked entries) are allowed, and map to exactly 0,
    but every row must have at least one finite entry.
    """
    y = _softmax(x.data)

    def backward(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True)),

    return Tensor._from_op(y, (x,), backward)

def log_softmax_lastdim(x):
    data = x.data
    row_max = _row_max(data)
    shifted = data - row_max
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return g - np.exp(y) * g.sum(axis=-1, keepdims=True),

    return Tensor._from_op(y, (x,), backward)

def layer_norm(x, gamma, beta, eps):
    """
    Standardize each row of a matrix, then scale by *gamma* and shift by
    *beta*.
    """
    if x.ndim != 2:
        raise ShapeError(f"layer norm expects a matrix, not {x.shape}")

    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer norm gain/bias must have shape ({d},), not {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, not {eps}")

    data, g_data = x.data, gamma.data
    centered = data - data.mean(axis=-1, keepdims=True)
    variance = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1 / np.sqrt(variance + eps)
    normed = centered * inv_std

    def backward(g):
        g_normed = g * g_data
        g_x = inv_std * (
                g_normed
                - g_normed.mean(axis=-1, keepdims=True)
                - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return g_x, (g * normed).sum(axis=0), g.sum(axis=0)

    return Tensor._from_op(normed * g_data + beta.data, (x, gamma, beta), backward)

def cross_entropy_masked(logits, targets, positions):
    """
    Sum the negative log-likelihood of each target token at its position.

    *logits* is a T×V matrix, and *targets* and *positions* are parallel
    sequences: ``targets[i]`` is the id expected at row ``positions[i]``.
    """
    positions = np.asarray(list(positions), dtype=np.int64)
    targets = np.asarray(list(targets), dtype=np.int64)

    if logits.ndim != 2:
        raise ShapeError(f"logits must be a matrix, not {logits.shape}")
    if positions.size == 0:
        raise ShapeError("no positions given, the loss is undefined")
    if positions.shape != targets.shape:
        raise ShapeError(f"got {positions.size} positions but {targets.size} targets")

    num_rows, vocab_size = logits.shape
    if positions.min() < 0 or positions.max() >= num_rows:
        raise ShapeError(f"positions must be in [0, {num_rows}), got {positions.tolist()}")
    if targets.min() < 0 or targets.max() >= vocab_size:
        raise ShapeError(f"targets must be in [0, {vocab_size}), got {targets.tolist()}")

    rows = logits.data[positions]
    shifted = rows - rows.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picks = np.arange(positions.size)
    loss = -log_probs[picks, targets].sum()

    def backward(g):
        probs = np.exp(log_probs)
        probs[picks, targets] -= 1
        grad = np.zeros(logits.shape, dtype=DTYPE)
        np.add.at(grad, positions, g * probs)
        return grad,

    return Tensor._from_op(loss, (logits,), backward)

def backward(loss):
    """
    Accumulate the gradient of the given scalar into every parameter it
    depends on.

    Gradients are added to whatever is already stored in each
    `Parameter.grad`, so call `zero_grad()` between steps.
    """
    if loss.shape != ():
        raise ShapeError(f"can only differentiate a scalar, not a tensor of shape {loss.shape}")

    grads = {id(loss): np.ones((), dtype=DTYPE)}

    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue

        if node._param is not None:
            node._param.grad += g

        if node._backward is None:
            continue

        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if not parent._tracked:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad

def zero_grad(params):
    for param in params:
        param.zero_grad()

def clip_grad_norm(params, max_norm):
    """
    Rescale all gradients so their joint L2 norm is at most *max_norm*.
    Return the norm before clipping.
    """
    params = list(params)
    norm = math.sqrt(sum(float((p.grad**2).sum()) for p in params))

    if norm > max_norm:
        for param in params:
            param.grad *= max_norm / norm

    return norm

def adam_states(params):
    return {p.name: AdamState(p.shape) for p in params}

def adam_step(params, states, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    Apply one bias-corrected Adam update to each parameter.

    *states* maps parameter names to `AdamState` objects, which are updated in
    place.  Gradients are left alone; the caller is responsible for zeroing
    them.
    """
    for param in params:
        try:
            state = states[param.name]
        except KeyError:
            raise OptimizerError(f"no optimizer state for parameter '{param.name}'") from None

        if state.m.shape != param.shape:
            raise OptimizerError(f"optimizer state for '{param.name}' has shape {state.m.shape}, expected {param.shape}")

        g = param.grad
        state.step += 1
        state.m = beta1 * state.m + (1 - beta1) * g
        state.v = beta2 * state.v + (1 - beta2) * g * g

        m_hat = state.m / (1 - beta1**state.step)
        v_hat = state.v / (1 - beta2**state.step)
        param.value = param.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)

def check_gradients(loss_fn, params, h=1e-5, floor=1e-4, num_samples=None, rng=None):
    """
    Compare the gradients from `backward()` to central finite differences.

    *loss_fn* is called with no arguments and must return a scalar tensor
    computed from the given parameters.  Every coordinate is checked, unless
    *num_samples* is given, in which case that many coordinates are picked at
    random from each parameter.  Returns the largest relative error and the
    (parameter name, flat index) where it occurred.  Relative errors are
    computed against ``max(|analytic|, |numeric|, floor)``, so coordinates
    whose gradient is essentially zero are compared in absolute terms.
    """
    params = list(params)
    zero_grad(params)
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() for p in params}

    worst_error, worst_where = 0.0, None

    for param in params:
        original = param.value.data.copy()
        indices = range(original.size)
        if num_samples is not None and num_samples < original.size:
            indices = sorted(rng.choice(original.size, size=num_samples, replace=False))

        for i in indices:
            def loss_at(delta):
                perturbed = original.copy()
                perturbed.flat[i] += delta
                param.value = perturbed
                return loss_fn().item()

            numeric = (loss_at(h) - loss_at(-h)) / (2 * h)
            exact = analytic[param.name].flat[i]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)

            if error > worst_error:
                worst_error, worst_where = error, (param.name, int(i))

        param.value = original

    zero_grad(params)
    return worst_error, worst_where


def _row_max(data):
    row_max = data.max(axis=-1, keepdims=True)
    if np.isneginf(row_max).any():
        raise DegenerateRowError("every entry in a softmax row is -inf (the row is fully masked)")
    return row_max

def _softmax(data):
    e = np.exp(data - _row_max(data))
    return e / e.sum(axis=-1, keepdims=True)

def _topological_order(root):
    order, visited = [], {id(root)}
    stack = [(root, iter(root._parents))]

    while stack:
        node, parents = stack[-1]
        for parent in parents:
            if parent._tracked and id(parent) not in visited:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                break
        else:
            order.append(node)
            stack.pop()

    return order
