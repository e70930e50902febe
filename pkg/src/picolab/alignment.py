"""Sketch-constrained alignment: paths, CTC and TACO lattices, CTC baseline.

A *path* assigns a sub-task label to every timestep; it matches a *sketch*
when collapsing adjacent duplicates yields the sketch. All lattices here have
no blank symbol: the states are sketch positions and the only transitions
are "stay" and "advance". Every dynamic programme runs in log space.
"""

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import logsumexp

from . import diffcore as dc
from .diffcore import Tape
from .errors import NumericalError, ValidationError
from .models import DEFAULT_HIDDEN, DEFAULT_WIDTHS, Metacontroller, PrimitiveLibrary, PrimitivePolicy
from .rng import make_rng
from .training import TrainConfig, batches, fit_regressor, make_batch

NEG_INF = -np.inf


def collapse(path):
    """Remove adjacent duplicates: ``(2,2,3,3,1) -> (2,3,1)``."""
    path = [int(x) for x in path]
    if not path:
        raise ValidationError("cannot collapse an empty path")
    out = [path[0]]
    for x in path[1:]:
        if x != out[-1]:
            out.append(x)
    return tuple(out)


def check_sketch(sketch):
    sketch = tuple(int(x) for x in sketch)
    if not sketch:
        raise ValidationError("a task sketch needs at least one label")
    if collapse(sketch) != sketch:
        raise ValidationError(f"sketch {sketch} has adjacent repeats")
    return sketch


def matches(path, sketch):
    return collapse(path) == tuple(sketch)


def enumerate_matching_paths(T, sketch):
    """All length-``T`` paths collapsing to ``sketch``, in lexicographic order of boundaries."""
    sketch = check_sketch(sketch)
    L = len(sketch)
    if T < L:
        raise ValidationError(f"T={T} is shorter than the sketch (L={L})")
    paths = []
    for cuts in itertools.combinations(range(1, T), L - 1):
        bounds = (0,) + cuts + (T,)
        path = []
        for l in range(L):
            path.extend([sketch[l]] * (bounds[l + 1] - bounds[l]))
        paths.append(tuple(path))
    return paths


def n_matching_paths(T, L):
    return comb(T - 1, L - 1)


def normalize_emissions(logits):
    """Row-wise log-softmax: a valid emission matrix from arbitrary scores."""
    logits = np.asarray(logits, dtype=np.float64)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def validate_emissions(log_probs, tol=1e-9):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise ValidationError("emissions must be a T x K array")
    if np.any(np.abs(logsumexp(log_probs, axis=1)) > tol):
        raise ValidationError("emission rows must log-sum-exp to 0")
    return log_probs


def _lattice_scores(log_probs, sketch):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    sketch = check_sketch(sketch)
    T, L = log_probs.shape[0], len(sketch)
    if T < L:
        raise ValidationError(f"T={T} is shorter than the sketch (L={L}); the likelihood is zero")
    if max(sketch) >= log_probs.shape[1] or min(sketch) < 0:
        raise ValidationError("sketch label outside the emission alphabet")
    return log_probs[:, list(sketch)], T, L


def _forward(E):
    """Log forward variables over the stay/advance lattice for scores ``E[t, l]``."""
    T, L = E.shape
    alpha = np.full((T, L), NEG_INF)
    alpha[0, 0] = E[0, 0]
    for t in range(1, T):
        prev = alpha[t - 1]
        moved = np.concatenate([[NEG_INF], prev[:-1]])
        alpha[t] = np.logaddexp(prev, moved) + E[t]
    return alpha


def _backward(E):
    """``beta[t, l]``: log mass of completing from ``(t, l)``, excluding ``E[t, l]``."""
    T, L = E.shape
    beta = np.full((T, L), NEG_INF)
    beta[T - 1, L - 1] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + E[t + 1]
        ahead = np.concatenate([nxt[1:], [NEG_INF]])
        beta[t] = np.logaddexp(nxt, ahead)
    return beta


def ctc_log_likelihood(log_probs, sketch):
    """``log sum_{paths matching sketch} prod_t p(path_t | t)``."""
    E, T, L = _lattice_scores(log_probs, sketch)
    return float(_forward(E)[T - 1, L - 1])


def ctc_posteriors(log_probs, sketch):
    """Log-likelihood and ``d loglik / d log_probs`` (label occupancies)."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    E, T, L = _lattice_scores(log_probs, sketch)
    alpha = _forward(E)
    beta = _backward(E)
    ll = alpha[T - 1, L - 1]
    if not np.isfinite(ll):
        raise NumericalError("sketch has zero probability under the emissions")
    occ = np.exp(alpha + beta - ll)
    grad = np.zeros_like(log_probs)
    for l, k in enumerate(check_sketch(sketch)):
        grad[:, k] += occ[:, l]
    return float(ll), grad


def ctc_decode(log_probs, sketch):
    """Most probable matching path; ties resolve towards the earliest advance."""
    E, T, L = _lattice_scores(log_probs, sketch)
    sketch = check_sketch(sketch)
    best = np.full((T, L), NEG_INF)
    best[T - 1, L - 1] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = best[t + 1] + E[t + 1]
        ahead = np.concatenate([nxt[1:], [NEG_INF]])
        best[t] = np.maximum(nxt, ahead)
    path = [sketch[0]]
    l = 0
    for t in range(T - 1):
        stay = best[t + 1, l] + E[t + 1, l]
        adv = best[t + 1, l + 1] + E[t + 1, l + 1] if l + 1 < L else NEG_INF
        if adv >= stay:
            l += 1
        path.append(sketch[l])
    return tuple(path)


def brute_force_ctc(log_probs, sketch):
    """Enumeration oracle: ``(log-likelihood, argmax path)``; small T only."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T = log_probs.shape[0]
    paths = enumerate_matching_paths(T, sketch)
    scores = np.array([sum(log_probs[t, k] for t, k in enumerate(p)) for p in paths])
    # earliest advance == lexicographically largest position sequence
    order = sorted(range(len(paths)), key=lambda i: (scores[i], _positions(paths[i])), reverse=True)
    return float(logsumexp(scores)), paths[order[0]]


def _positions(path):
    pos, out = 0, [0]
    for a, b in zip(path[:-1], path[1:]):
        pos += a != b
        out.append(pos)
    return tuple(out)


def ctc_log_likelihood_op(log_probs, sketch):
    """Differentiable CTC log-likelihood of a ``(T, K)`` log-probability Tensor."""
    ll, grad = ctc_posteriors(log_probs.value, sketch)
    return dc.custom_op("ctc", (log_probs,), ll, lambda g, needs: (g * grad,))


# ---------------------------------------------------------------- TACO

def _stop_terms(stop_log_probs, T, L):
    s = np.asarray(stop_log_probs, dtype=np.float64)
    if s.shape == (T, 2):
        s = np.broadcast_to(s[:, None, :], (T, L, 2))
    if s.shape != (T, L, 2):
        raise ValidationError(f"stop log-probabilities must be (T, 2) or (T, L, 2); got {s.shape}")
    return s


def taco_log_likelihood(action_log_likes, stop_log_probs, sketch):
    """Joint log-likelihood of the sketch and the actions.

    ``action_log_likes[t, l]`` is ``log pi_{sketch[l]}(a_t | s_t)``.
    ``stop_log_probs[t, l] = (log stay, log advance)`` is the decision taken
    at timestep ``t`` by the sub-task at position ``l`` that was active at
    ``t - 1``; the ``(T, 2)`` form shares it across positions. The first
    timestep always counts as a "stay" of position 0.
    """
    A = np.asarray(action_log_likes, dtype=np.float64)
    sketch = check_sketch(sketch)
    T, L = A.shape[0], len(sketch)
    if A.ndim != 2 or A.shape[1] != L:
        raise ValidationError(f"action log-likelihoods must be (T, L={L}); got {A.shape}")
    if T < L:
        raise ValidationError(f"T={T} is shorter than the sketch (L={L})")
    S = _stop_terms(stop_log_probs, T, L)
    alpha = np.full(L, NEG_INF)
    alpha[0] = A[0, 0] + S[0, 0, 0]
    for t in range(1, T):
        stay = alpha + S[t, :, 0]
        adv = np.concatenate([[NEG_INF], alpha[:-1] + S[t, :-1, 1]])
        alpha = np.logaddexp(stay, adv) + A[t]
    return float(alpha[L - 1])


def brute_force_taco(action_log_likes, stop_log_probs, sketch):
    A = np.asarray(action_log_likes, dtype=np.float64)
    sketch = check_sketch(sketch)
    T, L = A.shape[0], len(sketch)
    S = _stop_terms(stop_log_probs, T, L)
    scores = []
    for path in enumerate_matching_paths(T, tuple(range(L))):
        score = A[0, 0] + S[0, 0, 0]
        for t in range(1, T):
            prev, cur = path[t - 1], path[t]
            score += A[t, cur] + S[t, prev, 1 if cur > prev else 0]
        scores.append(score)
    return float(logsumexp(scores))


def gaussian_log_likelihood(predicted, actions):
    """Per-row log density of ``actions`` under unit-variance Gaussians at ``predicted``."""
    r = np.asarray(actions, dtype=np.float64) - np.asarray(predicted, dtype=np.float64)
    return -0.5 * np.sum(r * r, axis=-1) - 0.5 * r.shape[-1] * np.log(2 * np.pi)


# ---------------------------------------------------------------- CTC baseline

class EmissionNetwork:
    """Recurrent encoder with a log-softmax head over ``K`` labels.

    Shares the metacontroller architecture so the comparison with PICO uses
    the same recurrent width.
    """

    def __init__(self, state_dim, n_labels, rng, hidden_dim=DEFAULT_HIDDEN):
        self.body = Metacontroller.random(state_dim, n_labels, rng, hidden_dim)
        self.params = self.body.params

    def log_probs(self, states):
        return dc.log_softmax(self.body.gate_logits(self.body.hidden_sequence(states)))


@dataclass
class CTCSegmenter:
    network: EmissionNetwork

    def emissions(self, states):
        return self.network.log_probs(np.asarray(states, dtype=np.float64)).value

    def segment(self, states, sketch):
        return np.array(ctc_decode(self.emissions(states), sketch), dtype=np.int64)


@dataclass
class CTCBaseline:
    segmenter: CTCSegmenter
    library: object
    train_accuracy: float
    history: list

    def predict(self, demo):
        """Decoded labels and the matching primitive's actions for one demonstration."""
        labels = self.segmenter.segment(demo.states, demo.sketch)
        acts = self.library.forward_all(demo.states).value
        return labels, acts[np.arange(len(labels)), labels]


def train_ctc_baseline(dataset, cfg, library=None, pretrain_cfg=None, hidden_dim=DEFAULT_HIDDEN,
                       widths=DEFAULT_WIDTHS, clone_dataset=None):
    """Segment-then-act baseline.

    1. fit an emission network by maximising the CTC likelihood of each
       trajectory's sketch;
    2. decode every training trajectory to a path;
    3. act with ``library`` (slot ``k`` serves label ``k``) or, when no
       library is given, behaviour-clone one primitive per label on its
       decoded timesteps (of ``clone_dataset`` when given, which must carry
       sketches too).
    """
    if len(dataset) == 0:
        raise ValidationError("training set is empty")
    if any(d.sketch is None or len(d.sketch) == 0 for d in dataset):
        raise ValidationError("every trajectory needs a task sketch")
    net = EmissionNetwork(dataset.state_dim, dataset.n_labels,
                          make_rng(cfg.seed, "init", "ctc"), hidden_dim)
    params = net.params
    opt = cfg.optimizer()
    rng = make_rng(cfg.seed, "shuffle", "ctc")
    history = []
    for epoch in range(cfg.epochs):
        epoch_ll = 0.0
        for chunk in batches(dataset, cfg.batch, rng):
            b = make_batch(chunk)
            with Tape() as tape:
                logp = net.log_probs(b.states)
                total, steps = None, 0
                for i, (demo, n) in enumerate(zip(chunk, b.lengths)):
                    try:
                        ll = ctc_log_likelihood_op(dc.take(logp, (i, slice(0, n))), demo.sketch)
                    except NumericalError as exc:
                        raise NumericalError("CTC lattice failed", epoch=epoch,
                                             trajectory=demo.index) from exc
                    total = ll if total is None else dc.add(total, ll)
                    steps += n
                loss = dc.scale(total, -1.0 / steps)
            grads = dc.backward(loss, tape, params)
            grads, _ = dc.clip_by_global_norm(grads, cfg.grad_clip_norm)
            opt.step(params, grads)
            epoch_ll += float(total.value)
        history.append(epoch_ll / dataset.n_timesteps)
    segmenter = CTCSegmenter(net)
    decoded = [segmenter.segment(d.states, d.sketch) for d in dataset]
    if all(d.labels is not None for d in dataset):
        accuracy = sum(int(np.sum(p == d.labels)) for p, d in zip(decoded, dataset)) / dataset.n_timesteps
    else:
        accuracy = float("nan")
    if library is not None:
        if library.state_dim != dataset.state_dim or len(library) < dataset.n_labels:
            raise ValidationError("library does not cover the dataset's labels")
        return CTCBaseline(segmenter, library, accuracy, history)
    if clone_dataset is not None:
        dataset = clone_dataset
        decoded = [segmenter.segment(d.states, d.sketch) for d in dataset]
    pcfg = pretrain_cfg or TrainConfig(epochs=150, learning_rate=3e-3, seed=cfg.seed)
    policies = []
    for k in range(dataset.n_labels):
        S = np.concatenate([d.states[p == k] for p, d in zip(decoded, dataset)])
        A = np.concatenate([d.actions[p == k] for p, d in zip(decoded, dataset)])
        policy = PrimitivePolicy.random(f"ctc{k}", dataset.state_dim, dataset.action_dim,
                                        make_rng(pcfg.seed, "init", f"ctc{k}"), widths, skill=k)
        if len(S):
            fit_regressor(policy, S, A, pcfg)
        policies.append(policy)
    return CTCBaseline(segmenter, PrimitiveLibrary(policies), accuracy, history)
