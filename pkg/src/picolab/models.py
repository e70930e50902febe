"""The PICO network: primitive library, recurrent metacontroller, blending.

A :class:`PicoNetwork` pairs a :class:`PrimitiveLibrary` with a
:class:`Metacontroller`. At every timestep the controller emits a softmax
distribution ``lambda`` over library slots and the predicted action is the
``lambda``-weighted sum of every primitive's action. Primitives see the raw
state only; the controller sees the state through an encoder feeding a tanh
recurrence that starts from the zero vector for every trajectory.
"""

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import ParameterSet, Tensor
from .errors import DimensionError, ValidationError
from .rng import make_rng

DEFAULT_WIDTHS = (64, 64)
DEFAULT_HIDDEN = 64


def init_affine(rng, n_out, n_in):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and bias."""
    bound = 1.0 / np.sqrt(n_in)
    W = rng.uniform(-bound, bound, size=(n_out, n_in))
    b = rng.uniform(-bound, bound, size=n_out)
    return W, b


def _check_extent(what, x, n):
    if x.shape[-1] != n:
        raise DimensionError(f"{what}: expected last extent {n}, got shape {x.shape}")


@dataclass
class PrimitivePolicy:
    """Feed-forward state -> action regressor with a linear output head.

    ``skill`` is the ground-truth label this policy stands for, when known;
    it is used only for evaluation, never in training.
    """

    id: str
    state_dim: int
    action_dim: int
    widths: tuple = DEFAULT_WIDTHS
    origin: str = "pretrained"
    skill: int = None
    params: ParameterSet = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.origin not in ("pretrained", "gap"):
            raise ValidationError(f"unknown primitive origin {self.origin!r}")
        self.widths = tuple(int(w) for w in self.widths)
        if self.params is None:
            self.params = ParameterSet()
            dims = (self.state_dim,) + self.widths + (self.action_dim,)
            for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
                self.params.add(f"fc{i}.weight", np.zeros((n_out, n_in)))
                self.params.add(f"fc{i}.bias", np.zeros(n_out))

    @classmethod
    def random(cls, id, state_dim, action_dim, rng, widths=DEFAULT_WIDTHS, **kw):
        policy = cls(id, state_dim, action_dim, widths, **kw)
        policy.reinitialize(rng)
        return policy

    def reinitialize(self, rng):
        for i in range(self.n_layers):
            W, b = init_affine(rng, *self.params[f"fc{i}.weight"].shape)
            self.params[f"fc{i}.weight"].value = W
            self.params[f"fc{i}.bias"].value = b

    @property
    def n_layers(self):
        return len(self.widths) + 1

    @property
    def frozen(self):
        return len(self.params.frozen) == len(self.params)

    def freeze(self):
        self.params.freeze()

    def unfreeze(self):
        self.params.unfreeze()

    def forward(self, states):
        """Actions for a state vector or any batch ``(..., state_dim)``."""
        x = dc.as_tensor(states)
        _check_extent(f"primitive {self.id}", x, self.state_dim)
        last = self.n_layers - 1
        for i in range(self.n_layers):
            act = "linear" if i == last else "relu"
            x = dc.forward_affine(x, self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"], act)
        return x


def primitive_forward(policy, state):
    return policy.forward(state)


class PrimitiveLibrary:
    """Ordered primitives; slot ``k`` is the meaning of gate output ``k``."""

    def __init__(self, policies):
        policies = list(policies)
        if not policies:
            raise ValidationError("a primitive library needs at least one policy")
        ids = [p.id for p in policies]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"primitive ids must be unique, got {ids}")
        s, a = policies[0].state_dim, policies[0].action_dim
        for p in policies:
            if (p.state_dim, p.action_dim) != (s, a):
                raise DimensionError(f"primitive {p.id} has dims {(p.state_dim, p.action_dim)}, "
                                     f"library uses {(s, a)}")
        self.policies = policies

    def __len__(self):
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def __getitem__(self, k):
        return self.policies[k]

    @property
    def state_dim(self):
        return self.policies[0].state_dim

    @property
    def action_dim(self):
        return self.policies[0].action_dim

    @property
    def ids(self):
        return [p.id for p in self.policies]

    @property
    def skills(self):
        return [p.skill for p in self.policies]

    def index(self, id):
        return self.ids.index(id)

    def forward_all(self, states):
        """Stack of all primitive actions: ``(..., K, action_dim)``."""
        outs = [p.forward(states) for p in self.policies]
        return dc.stack(outs, axis=-2)


class Metacontroller:
    """Encoder -> tanh recurrence -> gate head -> softmax over library slots."""

    def __init__(self, state_dim, n_primitives, hidden_dim=DEFAULT_HIDDEN, encoder_dim=None,
                 params=None):
        self.state_dim = state_dim
        self.n_primitives = n_primitives
        self.hidden_dim = hidden_dim
        self.encoder_dim = hidden_dim if encoder_dim is None else encoder_dim
        if params is None:
            params = ParameterSet()
            E, H = self.encoder_dim, hidden_dim
            params.add("enc.weight", np.zeros((E, state_dim)))
            params.add("enc.bias", np.zeros(E))
            params.add("rnn.w_ih", np.zeros((H, E)))
            params.add("rnn.w_hh", np.zeros((H, H)))
            params.add("rnn.bias", np.zeros(H))
            params.add("gate.weight", np.zeros((n_primitives, H)))
            params.add("gate.bias", np.zeros(n_primitives))
        self.params = params

    @classmethod
    def random(cls, state_dim, n_primitives, rng, hidden_dim=DEFAULT_HIDDEN, encoder_dim=None):
        ctrl = cls(state_dim, n_primitives, hidden_dim, encoder_dim)
        p = ctrl.params
        for layer in ("enc", "gate"):
            W, b = init_affine(rng, *p[f"{layer}.weight"].shape)
            p[f"{layer}.weight"].value, p[f"{layer}.bias"].value = W, b
        H, E = p["rnn.w_ih"].shape
        bound = 1.0 / np.sqrt(H)
        p["rnn.w_ih"].value = rng.uniform(-bound, bound, size=(H, E))
        p["rnn.w_hh"].value = rng.uniform(-bound, bound, size=(H, H))
        p["rnn.bias"].value = rng.uniform(-bound, bound, size=H)
        return ctrl

    def grow(self, n, rng):
        """Add ``n`` gate outputs; existing rows are kept exactly."""
        W = self.params["gate.weight"].value
        b = self.params["gate.bias"].value
        W_new, b_new = init_affine(rng, n, W.shape[1])
        self.params["gate.weight"].value = np.concatenate([W, W_new])
        self.params["gate.bias"].value = np.concatenate([b, b_new])
        self.n_primitives += n

    def encode(self, states):
        p = self.params
        return dc.forward_affine(states, p["enc.weight"], p["enc.bias"], "relu")

    def hidden_sequence(self, states):
        """Hidden states for ``(T, S)`` or ``(B, T, S)`` inputs."""
        x = dc.as_tensor(states)
        _check_extent("metacontroller", x, self.state_dim)
        p = self.params
        pre = dc.forward_affine(self.encode(x), p["rnn.w_ih"], p["rnn.bias"], "linear")
        return dc.recurrent_tanh(pre, p["rnn.w_hh"])

    def gate_logits(self, hidden):
        p = self.params
        return dc.forward_affine(hidden, p["gate.weight"], p["gate.bias"], "linear")

    def step(self, h_prev, state):
        """One recurrence step on plain arrays; returns ``(h, lambda)``."""
        h_prev = np.asarray(h_prev, dtype=np.float64)
        state = np.asarray(state, dtype=np.float64)
        if h_prev.shape != (self.hidden_dim,):
            raise DimensionError(f"h_prev must have extent {self.hidden_dim}, got {h_prev.shape}")
        if state.shape != (self.state_dim,):
            raise DimensionError(f"state must have extent {self.state_dim}, got {state.shape}")
        p = self.params
        enc = np.maximum(p["enc.weight"].value @ state + p["enc.bias"].value, 0.0)
        h = np.tanh(p["rnn.w_ih"].value @ enc + p["rnn.bias"].value + p["rnn.w_hh"].value @ h_prev)
        lam = dc.softmax(self.gate_logits(Tensor(h))).value
        return h, lam


def controller_step(ctrl, h_prev, state):
    return ctrl.step(h_prev, state)


def blended_action(lam, primitive_actions):
    """Convex combination of primitive actions; validates ``lam``."""
    lam = np.asarray(lam, dtype=np.float64)
    acts = np.asarray(primitive_actions, dtype=np.float64)
    if np.any(lam < 0):
        raise ValidationError("mixture weights must be non-negative")
    if abs(lam.sum() - 1.0) > 1e-9:
        raise ValidationError(f"mixture weights must sum to 1, got {lam.sum()!r}")
    if acts.ndim != 2 or acts.shape[0] != lam.shape[0]:
        raise DimensionError(f"weights {lam.shape} do not match primitive actions {acts.shape}")
    return lam @ acts


@dataclass
class RolloutRecord:
    lam: np.ndarray
    primitive_actions: np.ndarray
    blended_action: np.ndarray
    hidden: np.ndarray
    label: int


@dataclass
class NetworkOutput:
    """Tensors from a batched forward pass, all shaped ``(B, T, ...)``."""

    hidden: Tensor
    lam: Tensor
    primitive_actions: Tensor
    blended: Tensor


class PicoNetwork:
    def __init__(self, library, controller):
        if controller.n_primitives != len(library):
            raise DimensionError(f"controller gates {controller.n_primitives} slots but the "
                                 f"library holds {len(library)} primitives")
        if controller.state_dim != library.state_dim:
            raise DimensionError("controller and library disagree on state_dim")
        self.library = library
        self.controller = controller

    @classmethod
    def build(cls, library, seed, hidden_dim=DEFAULT_HIDDEN):
        ctrl = Metacontroller.random(library.state_dim, len(library), make_rng(seed, "init", "gate"),
                                     hidden_dim)
        return cls(library, ctrl)

    @property
    def n_primitives(self):
        return len(self.library)

    def parameters(self):
        parts = {f"primitive/{p.id}": p.params for p in self.library}
        parts["controller"] = self.controller.params
        return ParameterSet.merged(parts)

    def forward(self, states):
        """Batched forward over ``(B, T, S)`` (or ``(T, S)``) states."""
        x = dc.as_tensor(states)
        hidden = self.controller.hidden_sequence(x)
        lam = dc.softmax(self.controller.gate_logits(hidden))
        acts = self.library.forward_all(x)
        return NetworkOutput(hidden, lam, acts, dc.blend(lam, acts))

    def add_gap_primitives(self, n, seed):
        """Grow library and gate head by ``n`` randomly initialised primitives."""
        self.library = add_gap_primitives(self.library, n, seed)
        self.controller.grow(n, make_rng(seed, "init", "gap-gate"))
        return self


def add_gap_primitives(library, n, seed, widths=None):
    """A new library with ``n`` random ``gap`` primitives appended."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    base = library[0]
    widths = base.widths if widths is None else widths
    new = list(library.policies)
    existing = sum(1 for p in new if p.origin == "gap")
    for i in range(n):
        rng = make_rng(seed, "init", "gap", existing + i)
        new.append(PrimitivePolicy.random(f"gap{existing + i}", base.state_dim, base.action_dim,
                                          rng, widths, origin="gap"))
    return PrimitiveLibrary(new)


def rollout(network, states):
    """Per-timestep records for one trajectory of states ``(T, S)``."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValidationError("rollout needs a non-empty (T, state_dim) state sequence")
    out = network.forward(states)
    lam = out.lam.value
    acts = out.primitive_actions.value
    blended = out.blended.value
    hidden = out.hidden.value
    labels = np.argmax(lam, axis=-1)
    return [RolloutRecord(lam[t], acts[t], blended[t], hidden[t], int(labels[t]))
            for t in range(states.shape[0])]


def predict_labels(records):
    """Most probable slot per timestep; ties go to the lowest index."""
    if len(records) == 0:
        raise ValidationError("no records to label")
    return [int(np.argmax(r.lam)) for r in records]
