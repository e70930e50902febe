"""A small reverse-mode differentiation engine on top of numpy.

Operations build plain ``Tensor`` values. When a :class:`Tape` is active
(training mode) and at least one operand requires a gradient, the operation
is also recorded on the tape together with a closure that maps the output
gradient to input gradients. :func:`backward` replays the tape in reverse.

Only what the PICO network needs is provided: affine layers, ReLU/tanh,
softmax, a fused tanh recurrence with full backpropagation through time,
mixture blending and a masked mean-squared error.
"""

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DeterminismError, DimensionError, NumericalError, StateError, ValidationError

ACTIVATIONS = ("relu", "linear", "none")


class Tensor:
    """An n-dimensional float64 array that may take part in differentiation."""

    __slots__ = ("value", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def parameter(value):
    """A trainable leaf tensor owning a private copy of ``value``."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class ParameterSet:
    """Named parameters plus the set of names excluded from updates.

    Freezing is stored on the tensors themselves (``requires_grad``), so a
    tensor shared by several sets is frozen in all of them.
    """

    def __init__(self, params=None, frozen=()):
        self._params = {}
        for name, tensor in (params or {}).items():
            self.add(name, tensor)
        self.freeze(frozen)

    def add(self, name, tensor):
        if name in self._params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        if not isinstance(tensor, Tensor):
            tensor = parameter(tensor)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    @property
    def frozen(self):
        return frozenset(n for n, t in self._params.items() if not t.requires_grad)

    def trainable(self):
        return [n for n, t in self._params.items() if t.requires_grad]

    def freeze(self, names=None):
        for name in self._params if names is None else names:
            if name not in self._params:
                raise ValidationError(f"cannot freeze unknown parameter {name!r}")
            self._params[name].requires_grad = False

    def unfreeze(self, names=None):
        for name in self._params if names is None else names:
            self._params[name].requires_grad = True

    def count(self):
        return sum(t.size for t in self._params.values())

    def snapshot(self):
        return {n: t.value.copy() for n, t in self._params.items()}

    def load(self, values):
        for name, value in values.items():
            tensor = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != tensor.shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {tensor.shape}, got {value.shape}")
            tensor.value = value.copy()

    @classmethod
    def merged(cls, parts):
        """Combine ``{prefix: ParameterSet}`` into one set with ``prefix/name`` keys."""
        out = cls()
        for prefix, ps in parts.items():
            for name, tensor in ps.items():
                out.add(f"{prefix}/{name}", tensor)
        return out


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: int
    backward: Callable


class Tape:
    """Records operations in execution order (hence topological order).

    Use as a context manager; the innermost active tape of the current thread
    receives the recordings.
    """

    def __init__(self):
        self.entries = []
        self._ids = {}
        self._tensors = []

    def node_id(self, tensor):
        key = id(tensor)
        if key not in self._ids:
            self._ids[key] = len(self._tensors)
            self._tensors.append(tensor)
        return self._ids[key]

    def record(self, op, inputs, output, backward_fn):
        in_ids = tuple(self.node_id(t) for t in inputs)
        out_id = self.node_id(output)
        self.entries.append(TapeEntry(op, in_ids, out_id, backward_fn))

    def produced(self, tensor):
        key = id(tensor)
        if key not in self._ids:
            return False
        node = self._ids[key]
        return any(e.output == node for e in reversed(self.entries))

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


def training_mode():
    return active_tape() is not None


def custom_op(op, inputs, value, backward_fn):
    """Wrap ``value`` as the output of ``op`` and record it if needed.

    ``backward_fn(grad_out, needs)`` returns one gradient (or None) per input;
    ``needs[i]`` tells whether input ``i`` requires a gradient.
    """
    value = np.asarray(value, dtype=np.float64)
    # a non-finite sum is cheap to detect and implies a non-finite entry or overflow
    if not np.isfinite(value.sum()) and not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite output in {op}")
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        tape.record(op, inputs, out, backward_fn)
    return out


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if b.value.ndim and a.shape != b.shape:
        _check_same_shape("add", a, b)
    scalar_b = b.value.ndim == 0 and a.value.ndim > 0

    def bwd(g, needs):
        gb = g.sum() if scalar_b else g
        return (g if needs[0] else None, gb if needs[1] else None)

    return custom_op("add", (a, b), a.value + b.value, bwd)


def sub(a, b):
    return add(a, scale(as_tensor(b), -1.0))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)

    def bwd(g, needs):
        return (g * b.value if needs[0] else None, g * a.value if needs[1] else None)

    return custom_op("mul", (a, b), a.value * b.value, bwd)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return custom_op("scale", (a,), a.value * c, lambda g, needs: (g * c,))


def square(a):
    a = as_tensor(a)
    return custom_op("square", (a,), a.value * a.value,
                     lambda g, needs: (2.0 * a.value * g,))


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    return custom_op("relu", (x,), np.where(mask, x.value, 0.0),
                     lambda g, needs: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.value)
    return custom_op("tanh", (x,), y, lambda g, needs: (g * (1.0 - y * y),))


def total(x):
    x = as_tensor(x)
    shape = x.shape
    return custom_op("sum", (x,), x.value.sum(),
                     lambda g, needs: (np.broadcast_to(g, shape).copy(),))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return custom_op("reshape", (x,), x.value.reshape(shape),
                     lambda g, needs: (g.reshape(old),))


def take(x, key):
    """Basic (slice/int) indexing with a scatter backward."""
    x = as_tensor(x)
    shape = x.shape

    def bwd(g, needs):
        gx = np.zeros(shape)
        gx[key] = g
        return (gx,)

    return custom_op("take", (x,), x.value[key], bwd)


def stack(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("stack: no tensors given")
    for t in tensors[1:]:
        _check_same_shape("stack", tensors[0], t)

    def bwd(g, needs):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if needs[i] else None for i in range(len(tensors)))

    return custom_op("stack", tensors, np.stack([t.value for t in tensors], axis=axis), bwd)


# ---------------------------------------------------------------- layers

def forward_affine(x, weights, bias, activation="linear"):
    """``act(W x + b)`` for a vector ``x`` or a batch of row vectors.

    ``activation`` is one of ``relu``, ``linear`` or ``none`` (the last two
    are the identity). The ReLU derivative at exactly zero is taken as 0.
    """
    x = as_tensor(x)
    if activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}")
    W, b = weights.value, bias.value
    if W.ndim != 2 or b.ndim != 1 or x.value.ndim < 1:
        raise DimensionError(
            f"affine: weights must be 2-D and bias 1-D (got weights {W.shape}, bias {b.shape})")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: input {x.shape} does not match weights {W.shape}")
    if b.shape[0] != W.shape[0]:
        raise DimensionError(f"affine: bias {b.shape} does not match weights {W.shape}")
    z = x.value @ W.T + b
    mask = None
    if activation == "relu":
        mask = z > 0
        z = np.where(mask, z, 0.0)

    def bwd(g, needs):
        gz = g if mask is None else g * mask
        m, n = W.shape
        gz2 = gz.reshape(-1, m)
        gx = gz @ W if needs[0] else None
        gW = gz2.T @ x.value.reshape(-1, n) if needs[1] else None
        gb = gz2.sum(axis=0) if needs[2] else None
        return gx, gW, gb

    return custom_op(f"affine[{activation}]", (x, weights, bias), z, bwd)


def softmax(logits):
    """Softmax over the last axis, computed with max subtraction."""
    logits = as_tensor(logits)
    v = logits.value
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimensionError("softmax: need at least one logit")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, needs):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return custom_op("softmax", (logits,), s, bwd)


def log_softmax(logits):
    logits = as_tensor(logits)
    v = logits.value
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimensionError("log_softmax: need at least one logit")
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bwd(g, needs):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return custom_op("log_softmax", (logits,), out, bwd)


def recurrent_tanh(preact, w_hh):
    """Run ``h_t = tanh(preact_t + W_hh h_{t-1})`` from ``h_0 = 0``.

    ``preact`` is ``(T, H)`` or ``(B, T, H)`` and already contains the input
    projection and bias. Gradients use full backpropagation through time.
    """
    preact, w_hh = as_tensor(preact), as_tensor(w_hh)
    P, W = preact.value, w_hh.value
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"recurrent: W_hh must be square, got {W.shape}")
    if P.ndim not in (2, 3) or P.shape[-1] != W.shape[0]:
        raise DimensionError(f"recurrent: preactivation {P.shape} does not match W_hh {W.shape}")
    single = P.ndim == 2
    if single:
        P = P[None]
    B, T, H = P.shape
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        h = np.tanh(P[:, t] + h @ W.T)
        hs[:, t] = h

    def bwd(g, needs):
        g = g[None] if single else g
        gP = np.empty_like(hs)
        gW = np.zeros_like(W)
        carry = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dz = (g[:, t] + carry) * (1.0 - hs[:, t] ** 2)
            gP[:, t] = dz
            if t > 0:
                gW += dz.T @ hs[:, t - 1]
            carry = dz @ W
        if single:
            gP = gP[0]
        return (gP if needs[0] else None, gW if needs[1] else None)

    return custom_op("recurrent_tanh", (preact, w_hh), hs[0] if single else hs, bwd)


def blend(weights, actions):
    """Mixture ``sum_k w[..., k] * actions[..., k, :]``."""
    weights, actions = as_tensor(weights), as_tensor(actions)
    w, a = weights.value, actions.value
    if a.ndim != w.ndim + 1 or a.shape[:-1] != w.shape:
        raise DimensionError(f"blend: weights {w.shape} do not match actions {a.shape}")

    def bwd(g, needs):
        gw = np.einsum("...a,...ka->...k", g, a) if needs[0] else None
        ga = w[..., :, None] * g[..., None, :] if needs[1] else None
        return gw, ga

    return custom_op("blend", (weights, actions), np.einsum("...k,...ka->...a", w, a), bwd)


def mse_loss(pred, target, mask=None):
    """Mean of squared differences.

    With ``mask`` (shape ``pred.shape[:-1]``, entries 0/1) only unmasked rows
    count and the mean runs over unmasked rows times the last extent.
    """
    pred = as_tensor(pred)
    target = target.value if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise DimensionError("mse: empty operands")
    d = pred.value - target
    if mask is None:
        w = np.ones_like(d)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != pred.shape[:-1]:
            raise DimensionError(f"mse: mask {mask.shape} does not match rows of {pred.shape}")
        w = np.broadcast_to(mask[..., None], d.shape)
    denom = w.sum()
    if denom == 0:
        raise DimensionError("mse: mask selects nothing")
    loss = (w * d * d).sum() / denom

    def bwd(g, needs):
        return (g * 2.0 * w * d / denom,)

    return custom_op("mse", (pred,), loss, bwd)


# ---------------------------------------------------------------- gradients

def backward(loss, tape, params):
    """Reverse-mode gradients of scalar ``loss`` for every trainable parameter.

    Frozen parameters get no entry. Trainable parameters the loss does not
    depend on get a zero gradient.
    """
    if tape is None:
        raise StateError("backward called without a tape; run the forward pass under `with Tape()`")
    if not isinstance(loss, Tensor) or not tape.produced(loss):
        raise StateError("loss was not produced on this tape (was training mode on?)")
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {tape.node_id(loss): np.ones_like(loss.value)}
    tensors = tape._tensors
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output, None)
        if g is None:
            continue
        inputs = [tensors[i] for i in entry.inputs]
        needs = tuple(t.requires_grad for t in inputs)
        for node, t, gi in zip(entry.inputs, inputs, entry.backward(g, needs)):
            if gi is None or not t.requires_grad:
                continue
            if node in grads:
                grads[node] = grads[node] + gi
            else:
                grads[node] = np.asarray(gi, dtype=np.float64).reshape(t.shape)
    out = {}
    for name, tensor in params.items():
        if not tensor.requires_grad:
            continue
        node = tape._ids.get(id(tensor))
        g = grads.get(node) if node is not None else None
        if g is None:
            g = np.zeros_like(tensor.value)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
        out[name] = g
    return out


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    factor = max_norm / norm
    return {n: g * factor for n, g in grads.items()}, norm


class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValidationError("learning rate must be non-negative")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            tensor = params[name]
            if not tensor.requires_grad:
                continue
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.lr == 0:
                continue
            tensor.value = tensor.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_check(forward_fn, params, batch, eps=1e-5):
    """Largest relative disagreement between analytic and numeric gradients.

    ``forward_fn(params, batch)`` must return a scalar Tensor. The numeric
    gradient uses central differences; the error of one entry is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``. Frozen
    parameters are skipped.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")

    def value():
        return float(forward_fn(params, batch).value)

    first, second = value(), value()
    if first != second:
        raise DeterminismError(f"forward returned {first!r} then {second!r}")
    with Tape() as tape:
        loss = forward_fn(params, batch)
    analytic = backward(loss, tape, params)
    worst = 0.0
    for name in params.trainable():
        tensor = params[name]
        base = tensor.value.copy()
        flat = base.reshape(-1)
        g = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            tensor.value = base
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = abs(g[i] - numeric) / max(1.0, abs(g[i]), abs(numeric))
            worst = max(worst, err)
        tensor.value = base
    return worst
