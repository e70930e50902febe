"""Training: behaviour-cloning pretraining and end-to-end PICO training.

PICO is trained only on the reconstruction error between blended and
demonstrated actions. Ground-truth labels, when present, are used for
validation metrics and never enter the loss.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Adam, Tape
from .envsim import NoiseConfig, segments
from .errors import DimensionError, NumericalError, ValidationError
from .models import DEFAULT_WIDTHS, PrimitiveLibrary, PrimitivePolicy
from .rng import make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 5.0
    seed: int = 0
    freeze_library: bool = True
    batch: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        if self.batch < 1:
            raise ValidationError("batch must be >= 1")

    def optimizer(self):
        return Adam(self.learning_rate, self.beta1, self.beta2, self.eps)


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    ids: list
    lengths: list


def make_batch(trajectories):
    """Zero-pad trajectories to a common length with a validity mask."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValidationError("empty batch")
    T = max(len(d.states) for d in trajectories)
    B = len(trajectories)
    S = trajectories[0].states.shape[1]
    A = trajectories[0].actions.shape[1]
    states = np.zeros((B, T, S))
    actions = np.zeros((B, T, A))
    mask = np.zeros((B, T))
    labels = np.full((B, T), -1, dtype=np.int64)
    for b, d in enumerate(trajectories):
        n = len(d.states)
        if len(d.actions) != n:
            raise ValidationError(f"trajectory {d.index}: {n} states but {len(d.actions)} actions")
        states[b, :n] = d.states
        actions[b, :n] = d.actions
        mask[b, :n] = 1.0
        if d.labels is not None:
            labels[b, :n] = d.labels
    return Batch(states, actions, mask, labels, [d.index for d in trajectories],
                 [len(d.states) for d in trajectories])


def pico_loss(blended, actions, mask=None):
    """Mean squared reconstruction error; contains no label term.

    ``blended`` is a Tensor from :meth:`PicoNetwork.forward` or a sequence of
    rollout records.
    """
    if isinstance(blended, (list, tuple)):
        blended = dc.Tensor(np.array([r.blended_action for r in blended]))
    actions = np.asarray(actions, dtype=np.float64)
    if blended.shape[:-1] != actions.shape[:-1]:
        raise ValidationError(f"predictions {blended.shape} and actions {actions.shape} are misaligned")
    try:
        return dc.mse_loss(blended, actions, mask)
    except DimensionError as exc:
        raise ValidationError(str(exc)) from exc


def _set_library_freeze(network, freeze):
    for p in network.library:
        if p.origin == "pretrained":
            (p.freeze if freeze else p.unfreeze)()
        else:
            p.unfreeze()
    network.controller.params.unfreeze()


def batches(dataset, size, rng=None):
    order = np.arange(len(dataset)) if rng is None else rng.permutation(len(dataset))
    for start in range(0, len(order), size):
        yield [dataset.trajectories[i] for i in order[start:start + size]]


def reconstruction_loss(network, dataset, batch_size=32):
    """Dataset-level MSE of blended actions, timestep weighted."""
    total, count = 0.0, 0.0
    for chunk in batches(dataset, batch_size):
        b = make_batch(chunk)
        out = network.forward(b.states)
        d = (out.blended.value - b.actions) ** 2 * b.mask[..., None]
        total += d.sum()
        count += b.mask.sum() * b.actions.shape[-1]
    return total / count


@dataclass
class Prediction:
    labels: np.ndarray
    slots: np.ndarray
    actions: np.ndarray
    hidden: np.ndarray
    lam: np.ndarray


def predict(network, dataset, skills=None, batch_size=32):
    """Per-trajectory gate labels, blended actions and hidden states.

    ``skills[k]`` maps library slot ``k`` to a ground-truth label id; by
    default each primitive's own ``skill`` (or its slot index) is used.
    """
    if skills is None:
        skills = [k if s is None else s for k, s in enumerate(network.library.skills)]
    skills = np.asarray(skills)
    out = []
    for chunk in batches(dataset, batch_size):
        b = make_batch(chunk)
        res = network.forward(b.states)
        lam = res.lam.value
        slots = np.argmax(lam, axis=-1)
        for i, n in enumerate(b.lengths):
            out.append(Prediction(skills[slots[i, :n]], slots[i, :n], res.blended.value[i, :n],
                                  res.hidden.value[i, :n], lam[i, :n]))
    return out


def label_accuracy_of(predictions, dataset):
    hits = sum(int(np.sum(p.labels == d.labels)) for p, d in zip(predictions, dataset))
    return hits / dataset.n_timesteps


def train_pico(network, dataset, cfg, validation=None, skills=None):
    """Adam on the reconstruction loss; returns ``(network, history)``.

    Pretrained primitives are frozen when ``cfg.freeze_library`` is set;
    gap primitives and the metacontroller are always trained.
    """
    _set_library_freeze(network, cfg.freeze_library)
    return _fit_network(network, dataset, cfg, validation, skills)


def refit_gate(network, dataset, cfg, validation=None, skills=None):
    """Train only the metacontroller; every primitive stays frozen.

    Primitive freeze flags are restored afterwards.
    """
    before = [p.frozen for p in network.library]
    for p in network.library:
        p.freeze()
    network.controller.params.unfreeze()
    try:
        return _fit_network(network, dataset, cfg, validation, skills)
    finally:
        for p, was in zip(network.library, before):
            (p.freeze if was else p.unfreeze)()


def _fit_network(network, dataset, cfg, validation, skills):
    if len(dataset) == 0:
        raise ValidationError("training set is empty")
    if dataset.state_dim != network.library.state_dim or dataset.action_dim != network.library.action_dim:
        raise DimensionError("dataset dimensions do not match the network")
    params = network.parameters()
    opt = cfg.optimizer()
    rng = make_rng(cfg.seed, "shuffle", "epochs")
    history = TrainingHistory()
    for epoch in range(cfg.epochs):
        for chunk in batches(dataset, cfg.batch, rng):
            b = make_batch(chunk)
            try:
                with Tape() as tape:
                    out = network.forward(b.states)
                    loss = pico_loss(out.blended, b.actions, b.mask)
                grads = dc.backward(loss, tape, params)
            except NumericalError as exc:
                raise NumericalError("training diverged", epoch=epoch, trajectories=b.ids) from exc
            grads, _ = dc.clip_by_global_norm(grads, cfg.grad_clip_norm)
            opt.step(params, grads)
        train_loss = reconstruction_loss(network, dataset)
        if not np.isfinite(train_loss):
            raise NumericalError("training loss is not finite", epoch=epoch)
        history.train_loss.append(float(train_loss))
        if validation is not None and len(validation):
            history.val_loss.append(float(reconstruction_loss(network, validation)))
            if all(d.labels is not None for d in validation):
                preds = predict(network, validation, skills)
                history.val_accuracy.append(label_accuracy_of(preds, validation))
        log.debug("epoch %d train %.5f", epoch, train_loss)
    return network, history


def pretrain_primitive(segments, noise=None, cfg=None, widths=DEFAULT_WIDTHS, id=None,
                       minibatch=256):
    """Behaviour-clone one primitive from segments of a single sub-task.

    ``noise`` describes the action noise injected while the segments were
    collected; it is validated and kept in ``policy.meta`` as provenance.
    """
    segments = list(segments)
    if not segments:
        raise ValidationError("no segments to train on")
    labels = {s.label for s in segments}
    if len(labels) != 1:
        raise ValidationError(f"segments mix sub-task labels {sorted(labels)}")
    label = labels.pop()
    noise = NoiseConfig() if noise is None else noise
    cfg = TrainConfig(epochs=200, learning_rate=3e-3) if cfg is None else cfg
    S = np.concatenate([s.states for s in segments])
    A = np.concatenate([s.actions for s in segments])
    id = f"skill{label}" if id is None else id
    policy = PrimitivePolicy.random(id, S.shape[1], A.shape[1], make_rng(cfg.seed, "init", id),
                                    widths, origin="pretrained", skill=label)
    policy.meta["collection_noise_std"] = noise.to_json()
    fit_regressor(policy, S, A, cfg, minibatch)
    return policy


def fit_regressor(policy, states, actions, cfg, minibatch=256):
    """Minibatch Adam on MSE for a single policy; returns final train MSE."""
    params = policy.params
    params.unfreeze()
    opt = cfg.optimizer()
    rng = make_rng(cfg.seed, "shuffle", "pretrain", policy.id)
    n = len(states)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start:start + minibatch]
            with Tape() as tape:
                loss = dc.mse_loss(policy.forward(states[idx]), actions[idx])
            grads = dc.backward(loss, tape, params)
            grads, _ = dc.clip_by_global_norm(grads, cfg.grad_clip_norm)
            opt.step(params, grads)
    return float(dc.mse_loss(policy.forward(states), actions).value)


def pretrain_library(dataset, labels, cfg=None, noise=None, widths=DEFAULT_WIDTHS, names=None):
    """One pretrained primitive per label from the dataset's ground-truth segments."""
    policies = []
    for label in labels:
        name = names[label] if names else f"skill{label}"
        policies.append(pretrain_primitive(segments(dataset, label), noise, cfg, widths, id=name))
    return PrimitiveLibrary(policies)


def consolidate_gap_primitives(network, dataset, cfg, minibatch=256):
    """Refit each gap primitive on the training timesteps its gate slot wins.

    The gate is left untouched, so labels do not change. Runs ``cfg.epochs``
    epochs of minibatch regression warm-started from the current weights.
    Returns ``{primitive id: number of claimed timesteps}``.
    """
    preds = predict(network, dataset, skills=list(range(network.n_primitives)))
    claimed = {}
    for k, policy in enumerate(network.library):
        if policy.origin != "gap":
            continue
        S = np.concatenate([d.states[p.slots == k] for p, d in zip(preds, dataset)])
        A = np.concatenate([d.actions[p.slots == k] for p, d in zip(preds, dataset)])
        claimed[policy.id] = len(S)
        if len(S):
            fit_regressor(policy, S, A, cfg, minibatch)
    return claimed


def discover_gaps(network, dataset, cfg, consolidate_cfg=None, refit_cfg=None, validation=None,
                  skills=None):
    """Gap discovery: end-to-end training, gap consolidation, gate refit.

    1. :func:`train_pico` with gap primitives and gate trainable;
    2. :func:`consolidate_gap_primitives` on the timesteps each gap claims;
    3. :func:`refit_gate` with the whole library frozen, so the gate adapts
       to the consolidated gap policies.

    Either later stage is skipped when its config is ``None``. Returns
    ``(network, histories)`` with one history per gate-training stage.
    """
    network, history = train_pico(network, dataset, cfg, validation, skills)
    histories = [history]
    if consolidate_cfg is not None:
        consolidate_gap_primitives(network, dataset, consolidate_cfg)
    if refit_cfg is not None:
        network, h = refit_gate(network, dataset, refit_cfg, validation, skills)
        histories.append(h)
    return network, histories
