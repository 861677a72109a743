"""
Dense tensors with tape-based reverse-mode differentiation.

Every operation producing a `Tensor` from at least one grad-enabled input
appends a `Node` to the process-wide `GradientGraph`. Nodes are only ever
appended, so the append order is a topological order, and `backward` is a
single reverse sweep over the tape. The tape is released wholesale through
`reset_graph()`, normally once per optimizer step.

Broadcasting follows the leading-extent rule: a missing or size-1 extent
repeats. Gradients flowing into a broadcast operand are summed back to the
operand's shape.
"""

import builtins
import contextlib
import dataclasses
import typing

import numpy as np
import scipy.special

import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


_PRECISIONS = {
    "double": np.float64,
    "single": np.float32,
}
_DTYPE = np.float64


def set_precision(precision: str):
    """
    Switches the dtype of newly created tensors. "double" is required for
    finite-difference checks, "single" is allowed for training.
    """
    global _DTYPE

    if precision not in _PRECISIONS:
        raise ValueError(f"Unknown precision `{precision}`, expected one of {sorted(_PRECISIONS)}")

    _DTYPE = _PRECISIONS[precision]


def default_dtype():
    return _DTYPE


class ShapeError(ValueError):

    def __init__(self, message, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)

        if shapes:
            message = f"{message}: " + ", ".join(str(tuple(s)) for s in shapes)

        ValueError.__init__(self, message)


class GraphError(RuntimeError):
    pass


@dataclasses.dataclass
class Node:
    name: str
    inputs: tuple
    vjp: typing.Callable
    """
    Maps the gradient of the output onto a tuple of input gradients, one per
    input. `None` stands for "no contribution".
    """


@dataclasses.dataclass
class GradientGraph:
    nodes: list = dataclasses.field(default_factory=list)
    recording: bool = True
    consumed: bool = False
    epoch: int = 0

    def append(self, node: Node) -> int:
        self.nodes.append(node)

        return len(self.nodes) - 1

    def reset(self):
        self.nodes = []
        self.consumed = False
        self.epoch += 1

    def __len__(self):
        return len(self.nodes)


_GRAPH = GradientGraph()


def graph() -> GradientGraph:
    return _GRAPH


def reset_graph():
    _GRAPH.reset()


@contextlib.contextmanager
def no_grad():
    recording = _GRAPH.recording
    _GRAPH.recording = False

    try:
        yield
    finally:
        _GRAPH.recording = recording


class Tensor:
    # Makes numpy defer `ndarray <op> Tensor` to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, grad_enabled=False, name=None, dtype=None):
        self.data = np.array(data, dtype=dtype or _DTYPE)
        self.grad_enabled = bool(grad_enabled)
        self.grad = None
        self.name = name
        self.node_id = None
        self._epoch = None

    @classmethod
    def wrap(cls, data):
        """
        Wraps an operation result without copying it
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data)
        out.grad_enabled = False
        out.grad = None
        out.name = None
        out.node_id = None
        out._epoch = None

        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return self.data.shape[0]

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad_enabled={self.grad_enabled}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)

        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)

        return mul(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)

        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])

        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log_(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value

    return Tensor(value)


def apply_op(name, data, inputs, vjp) -> Tensor:
    """
    Records an operation on the tape when recording is on and some input is
    grad-enabled. `vjp` receives the output gradient and returns one input
    gradient (or None) per entry of `inputs`.
    """
    out = Tensor.wrap(data)

    if _GRAPH.recording and any(t.grad_enabled for t in inputs):
        for t in inputs:
            if t.node_id is not None and t._epoch != _GRAPH.epoch:
                raise GraphError(f"`{name}` received a tensor recorded on a released graph")

        out.grad_enabled = True
        out.node_id = _GRAPH.append(Node(name, tuple(inputs), vjp))
        out._epoch = _GRAPH.epoch

    return out


def broadcast_shape(name, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"`{name}`: shapes are not broadcastable", *shapes)


def unbroadcast(grad, shape):
    """
    Sums `grad` back to `shape`, reverting leading-extent broadcasting
    """
    if grad.shape == tuple(shape):
        return grad

    lead = grad.ndim - len(shape)

    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))

    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)

    if axes:
        grad = grad.sum(axis=axes, keepdims=True)

    return grad.reshape(shape)


# Elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape("add", a.shape, b.shape)

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return apply_op("add", a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape("sub", a.shape, b.shape)

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return apply_op("sub", a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape("mul", a.shape, b.shape)

    def vjp(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return apply_op("mul", a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape("div", a.shape, b.shape)

    def vjp(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return apply_op("div", a.data / b.data, (a, b), vjp)


def neg(a):
    a = as_tensor(a)

    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, factor):
    a = as_tensor(a)
    factor = float(factor)

    return apply_op("scale", a.data * factor, (a,), lambda g: (g * factor,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    return apply_op("exp", out, (a,), lambda g: (g * out,))


def log_(a):
    a = as_tensor(a)

    if np.any(a.data <= 0):
        raise ValueError(f"`log` of a non-positive value (min {a.data.min()})")

    return apply_op("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)

    if np.any(a.data < 0):
        raise ValueError(f"`sqrt` of a negative value (min {a.data.min()})")

    out = np.sqrt(a.data)

    return apply_op("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def relu(a):
    a = as_tensor(a)
    positive = a.data > 0

    return apply_op("relu", np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,))


def gelu(a):
    """
    Exact GELU, x·Φ(x)
    """
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + scipy.special.erf(a.data / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)

    return apply_op("gelu", a.data * cdf, (a,), lambda g: (g * (cdf + a.data * pdf),))


def sigmoid(a):
    a = as_tensor(a)
    out = scipy.special.expit(a.data)

    return apply_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    """
    ln(1 + e^x), stable for large |x|
    """
    a = as_tensor(a)

    return apply_op("softplus", np.logaddexp(0.0, a.data), (a,),
        lambda g: (g * scipy.special.expit(a.data),))


# Contractions and normalizations


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("`matmul` requires operands of rank >= 2", a.shape, b.shape)

    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("`matmul` inner extents disagree", a.shape, b.shape)

    broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def vjp(g):
        return (unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape),
                unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return apply_op("matmul", np.matmul(a.data, b.data), (a, b), vjp)


def softmax(x, axis=-1, mask=None):
    """
    `mask` is a boolean array broadcastable to `x`; False entries get exactly
    zero probability. Every slice along `axis` must keep a visible entry.
    """
    x = as_tensor(x)
    _check_axis("softmax", x, axis)
    z = x.data

    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

        if not np.all(mask.any(axis=axis)):
            raise ValueError("`softmax` mask hides every entry of some slice")

        z = np.where(mask, z, -np.inf)

    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return apply_op("softmax", p, (x,), vjp)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    _check_axis("log_softmax", x, axis)
    out = x.data - scipy.special.logsumexp(x.data, axis=axis, keepdims=True)

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return apply_op("log_softmax", out, (x,), vjp)


def layer_norm(x, gain=None, bias=None, eps=1e-5):
    """
    Normalizes over the last extent, then applies the optional affine map
    """
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv
    out = normed
    inputs = [x]

    if gain is not None:
        out = out * gain.data
        inputs.append(gain)

    if bias is not None:
        out = out + bias.data
        inputs.append(bias)

    def vjp(g):
        grads = []
        gn = g * gain.data if gain is not None else g
        gx = inv * (gn - gn.mean(axis=-1, keepdims=True)
            - normed * (gn * normed).mean(axis=-1, keepdims=True))
        grads.append(gx)

        if gain is not None:
            grads.append(unbroadcast(g * normed, gain.shape))

        if bias is not None:
            grads.append(unbroadcast(g, bias.shape))

        return tuple(grads)

    return apply_op("layer_norm", out, tuple(inputs), vjp)


# Reductions


def _check_axis(name, x, axis):
    if axis is None:
        return

    for a in (axis if isinstance(axis, tuple) else (axis,)):
        if not -x.ndim <= a < x.ndim:
            raise ShapeError(f"`{name}`: axis {a} is out of range", x.shape)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)

    return np.array(np.broadcast_to(g, shape))


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    _check_axis("sum", x, axis)

    def vjp(g):
        return (_expand_reduced(g, x.shape, axis, keepdims),)

    return apply_op("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    _check_axis("mean", x, axis)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / builtins.max(1, np.asarray(out).size)

    def vjp(g):
        return (_expand_reduced(g, x.shape, axis, keepdims) / count,)

    return apply_op("mean", out, (x,), vjp)


def max(x, axis=None, keepdims=False):
    """
    Ties route the gradient to the lowest index along `axis` (lowest flat index
    when `axis` is None)
    """
    x = as_tensor(x)

    if axis is not None and not isinstance(axis, int):
        raise ShapeError("`max` reduces over a single axis or over everything", x.shape)

    _check_axis("max", x, axis)
    out = x.data.max(axis=axis, keepdims=keepdims)

    def vjp(g):
        grad = np.zeros_like(x.data)

        if axis is None:
            grad.flat[int(np.argmax(x.data))] = np.asarray(g).reshape(())
        else:
            index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
            g = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(grad, index, g, axis)

        return (grad,)

    return apply_op("max", out, (x,), vjp)


# Layout


def reshape(x, shape):
    x = as_tensor(x)

    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"`reshape` cannot produce {tuple(shape)}", x.shape)

    return apply_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)

    if sorted(a % builtins.max(1, x.ndim) for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"`transpose` axes {axes} are not a permutation", x.shape)

    inverse = tuple(np.argsort(axes))

    return apply_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    if len(tensors) == 0:
        raise ShapeError("`concat` requires at least one tensor")

    reference = tensors[0].shape
    axis = axis % len(reference)

    for t in tensors:
        if t.ndim != len(reference) or any(t.shape[i] != reference[i]
                for i in range(len(reference)) if i != axis):
            raise ShapeError("`concat` extents disagree off the concatenation axis",
                *[t.shape for t in tensors])

    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors)))

    return apply_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def narrow(x, axis, start, length):
    """
    Slices `length` entries of `axis` starting at `start`; out-of-range spans
    are rejected rather than clipped
    """
    x = as_tensor(x)
    _check_axis("narrow", x, axis)
    axis = axis % x.ndim

    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise IndexError(f"`narrow` span [{start}, {start + length}) is outside extent {x.shape[axis]} of axis {axis}")

    index = tuple(slice(start, start + length) if i == axis else slice(None) for i in range(x.ndim))

    return getitem(x, index)


def getitem(x, index):
    x = as_tensor(x)
    out = x.data[index]

    def vjp(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)

        return (grad,)

    return apply_op("getitem", out, (x,), vjp)


def embedding(table, ids):
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"`embedding` id outside [0, {table.shape[0]}): {ids.min()}..{ids.max()}")

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)

        return (grad,)

    return apply_op("embedding", table.data[ids], (table,), vjp)


# Differentiation


def backward(loss: Tensor) -> dict:
    """
    Reverse sweep from a scalar `loss`. Accumulates into `.grad` of every
    reachable grad-enabled leaf and returns the map leaf -> gradient of this
    sweep. The graph is consumed: a second sweep before `reset_graph()` raises.
    """
    if loss.data.size != 1:
        raise ShapeError("`backward` requires a scalar loss", loss.shape)

    if _GRAPH.consumed:
        raise GraphError("The gradient graph has already been consumed by `backward`; reset it first")

    if not loss.grad_enabled:
        raise GraphError("The loss does not depend on any grad-enabled tensor")

    gradients = dict()
    seed = np.ones_like(loss.data)

    if loss.node_id is None:
        gradients[loss] = seed
    else:
        if loss._epoch != _GRAPH.epoch:
            raise GraphError("The loss was recorded on a released graph")

        pending = {loss.node_id: seed}

        for node_id in range(loss.node_id, -1, -1):
            g = pending.pop(node_id, None)

            if g is None:
                continue

            node = _GRAPH.nodes[node_id]

            for tensor, tensor_grad in zip(node.inputs, node.vjp(g)):
                if tensor_grad is None or not tensor.grad_enabled:
                    continue

                if tensor.node_id is None:
                    previous = gradients.get(tensor, None)
                    gradients[tensor] = tensor_grad if previous is None else previous + tensor_grad
                else:
                    previous = pending.get(tensor.node_id, None)
                    pending[tensor.node_id] = tensor_grad if previous is None else previous + tensor_grad

    _GRAPH.consumed = True

    for tensor, g in gradients.items():
        g = np.asarray(g, dtype=tensor.data.dtype).reshape(tensor.shape)
        gradients[tensor] = g
        tensor.grad = g if tensor.grad is None else tensor.grad + g

    log.verbose(backward, "swept", len(_GRAPH), "nodes into", len(gradients), "leaves")

    return gradients
