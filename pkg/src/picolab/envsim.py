"""Synthetic demonstration domains with scripted experts.

Two desk-scale domains:

* ``blockworld``: a planar effector with a gripper reaches a block, closes
  the gripper, then lifts to a randomised height above the block.
  Labels 0/1/2 = reach/grasp/lift.
* ``dialpad``: an effector presses a sequence of keys whose positions are
  reshuffled on a grid for every demonstration. Label = index of the key
  currently targeted.

Dynamics are kinematic: ``next_state = state + action + noise``. The stored
action is the clean expert command and the noise that perturbed the executed
transition is stored next to it, so demonstrations are exactly reproducible
and cover states off the nominal expert path.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .rng import derive_seed, make_rng, substream

BLOCKWORLD_LABELS = ("reach", "grasp", "lift")
BLOCKWORLD_STATE = ("ee_x", "ee_y", "aperture", "block_x", "block_y", "lift_y",
                    "block_dx", "block_dy", "lift_dy", "block_dist", "contact", "holding")
BLOCKWORLD_ACTION = ("vx", "vy", "v_aperture")

MAX_SPEED = 0.1
REACH_TOL = 0.02
LIFT_TOL = 0.02
GRASP_CLOSED = 0.9
GRASP_RATE = 0.05
HOLD_GAIN = 0.3


@dataclass
class NoiseConfig:
    """Gaussian noise std per action dimension (a scalar applies to all)."""

    action_noise_std: object = 0.01

    def __post_init__(self):
        std = np.asarray(self.action_noise_std, dtype=np.float64)
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise ValidationError("noise std must be finite and non-negative")

    def std(self, action_dim):
        std = np.asarray(self.action_noise_std, dtype=np.float64)
        return np.broadcast_to(std, (action_dim,)).copy()

    def to_json(self):
        std = np.asarray(self.action_noise_std, dtype=np.float64)
        return float(std) if std.ndim == 0 else std.tolist()


@dataclass
class Demonstration:
    states: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    sketch: tuple
    domain: str
    seed: int
    noise: np.ndarray = None
    index: int = 0

    def __len__(self):
        return len(self.states)


@dataclass
class Dataset:
    domain: str
    state_dim: int
    action_dim: int
    n_labels: int
    trajectories: list
    config: dict = field(default_factory=dict)
    label_names: tuple = ()
    state_names: tuple = ()
    action_names: tuple = ()

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def subset(self, indices):
        return replace(self, trajectories=[self.trajectories[i] for i in indices])

    def with_trajectories(self, trajectories):
        return replace(self, trajectories=list(trajectories))

    @property
    def n_timesteps(self):
        return sum(len(d) for d in self.trajectories)

    def lengths(self):
        return [len(d) for d in self.trajectories]


def _clip_norm(v, limit):
    n = np.linalg.norm(v)
    return v * (limit / n) if n > limit else v


# ---------------------------------------------------------------- blockworld

def _blockworld_state(ee, aperture, block, lift_y):
    d = block - ee
    dist = np.hypot(d[0], d[1])
    return np.array([ee[0], ee[1], aperture, block[0], block[1], lift_y,
                     d[0], d[1], lift_y - ee[1], dist, float(dist < REACH_TOL),
                     float(aperture >= GRASP_CLOSED)])


def _blockworld_expert(phase, ee, aperture, block, lift_y):
    if phase == 0:
        v = _clip_norm(0.1 * (block - ee), 0.04)
        g = -0.2 * aperture
    elif phase == 1:
        v = HOLD_GAIN * (block - ee)
        g = GRASP_RATE
    else:
        v = np.array([0.1 * (block[0] - ee[0]), np.clip(0.1 * (lift_y - ee[1]), -0.04, 0.04)])
        g = 0.2 * (1.0 - aperture)
    return _clip_norm(np.array([v[0], v[1], g]), MAX_SPEED)


def _blockworld_episode(rng, std, t_bounds):
    block = np.array([rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4)])
    while True:
        ee = np.array([rng.uniform(0.0, 1.0), rng.uniform(0.4, 1.0)])
        if np.linalg.norm(ee - block) >= 0.3:
            break
    lift_y = block[1] + rng.uniform(0.25, 0.55)
    aperture = 0.0
    phase = 0
    states, actions, noises, labels = [], [], [], []
    for _ in range(t_bounds[1] + 1):
        if phase == 0 and np.linalg.norm(block - ee) < REACH_TOL:
            phase = 1
        if phase == 1 and aperture >= GRASP_CLOSED:
            phase = 2
        if phase == 2 and abs(lift_y - ee[1]) < LIFT_TOL:
            break
        a = _blockworld_expert(phase, ee, aperture, block, lift_y)
        n = rng.normal(0.0, 1.0, size=3) * std
        states.append(_blockworld_state(ee, aperture, block, lift_y))
        actions.append(a)
        noises.append(n)
        labels.append(phase)
        ee = ee + a[:2] + n[:2]
        aperture = float(np.clip(aperture + a[2] + n[2], 0.0, 1.0))
    else:
        return None
    if not t_bounds[0] <= len(states) <= t_bounds[1]:
        return None
    return np.array(states), np.array(actions), np.array(noises), np.array(labels, dtype=np.int64)


def blockworld_step(state, action):
    """Next blockworld state after executing ``action`` from ``state``.

    Follows the generator's kinematics (no noise), so a learned policy can be
    run closed loop from any recorded state.
    """
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    ee = state[:2] + action[:2]
    aperture = float(np.clip(state[2] + action[2], 0.0, 1.0))
    return _blockworld_state(ee, aperture, state[3:5], state[5])


def generate_blockworld(n, seed, noise=None, t_bounds=(60, 180)):
    """``n`` reach/grasp/lift demonstrations, a pure function of ``(n, seed, noise)``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    noise = NoiseConfig() if noise is None else noise
    std = noise.std(3)
    root = substream(seed, "blockworld")
    demos = []
    for i in range(n):
        demo_seed = derive_seed(root, i)
        rng = np.random.Generator(np.random.PCG64(demo_seed))
        episode = None
        while episode is None:
            episode = _blockworld_episode(rng, std, t_bounds)
        states, actions, noises, labels = episode
        demos.append(Demonstration(states, actions, labels, (0, 1, 2), "blockworld",
                                   demo_seed, noises, i))
    config = {"generator": "blockworld", "n": n, "seed": int(seed),
              "noise_std": noise.to_json(), "t_bounds": list(t_bounds)}
    return Dataset("blockworld", 12, 3, 3, demos, config, BLOCKWORLD_LABELS,
                   BLOCKWORLD_STATE, BLOCKWORLD_ACTION)


# ---------------------------------------------------------------- dialpad

DIAL_GAIN = 0.2
DIAL_SPEED = 0.05
DIAL_DWELL = 3


def dialpad_grid(n_keys):
    """Candidate key sites: a grid just large enough for ``n_keys`` keys."""
    cols = int(np.ceil(np.sqrt(n_keys)))
    rows = int(np.ceil(n_keys / cols)) + (1 if n_keys > 2 else 0)
    xs = np.linspace(0.15, 0.85, cols)
    ys = np.linspace(0.15, 0.85, rows)
    return np.array([(x, y) for y in ys for x in xs])


def _dialpad_state(ee, keys, pressed):
    rel = keys - ee
    return np.concatenate([ee, keys.reshape(-1), rel.reshape(-1),
                           np.linalg.norm(rel, axis=1), [float(pressed)]])


def _dialpad_episode(rng, n_keys, sketch_len, std):
    sites = dialpad_grid(n_keys)
    keys = sites[rng.permutation(len(sites))[:n_keys]]
    sketch = tuple(int(k) for k in rng.choice(n_keys, size=sketch_len, replace=False))
    ee = rng.uniform(0.0, 1.0, size=2)
    states, actions, noises, labels = [], [], [], []
    for pressed, key in enumerate(sketch):
        dwell = 0
        for _ in range(400):
            if dwell >= DIAL_DWELL:
                break
            if dwell > 0 or np.linalg.norm(keys[key] - ee) < REACH_TOL:
                dwell += 1
                a = DIAL_GAIN * (keys[key] - ee)
            else:
                a = _clip_norm(DIAL_GAIN * (keys[key] - ee), DIAL_SPEED)
            n = rng.normal(0.0, 1.0, size=2) * std
            states.append(_dialpad_state(ee, keys, pressed))
            actions.append(a)
            noises.append(n)
            labels.append(key)
            ee = ee + a + n
        else:
            return None
    return (np.array(states), np.array(actions), np.array(noises),
            np.array(labels, dtype=np.int64), sketch)


def generate_dialpad(n, K=10, sketch_len=4, seed=0, noise=None, stream="dialpad"):
    """``n`` key-press demonstrations over ``K`` keys with sketches of ``sketch_len``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    if not 1 <= sketch_len <= K:
        raise ValidationError(f"need 1 <= sketch_len <= K, got sketch_len={sketch_len}, K={K}")
    noise = NoiseConfig() if noise is None else noise
    std = noise.std(2)
    root = substream(seed, stream)
    demos = []
    for i in range(n):
        demo_seed = derive_seed(root, i)
        rng = np.random.Generator(np.random.PCG64(demo_seed))
        episode = None
        while episode is None:
            episode = _dialpad_episode(rng, K, sketch_len, std)
        states, actions, noises, labels, sketch = episode
        demos.append(Demonstration(states, actions, labels, sketch, "dialpad",
                                   demo_seed, noises, i))
    state_names = (("ee_x", "ee_y")
                   + tuple(f"key{k}_{c}" for k in range(K) for c in "xy")
                   + tuple(f"key{k}_d{c}" for k in range(K) for c in "xy")
                   + tuple(f"key{k}_dist" for k in range(K))
                   + ("pressed",))
    config = {"generator": "dialpad", "n": n, "K": K, "sketch_len": sketch_len,
              "seed": int(seed), "noise_std": noise.to_json(), "stream": stream}
    return Dataset("dialpad", 5 * K + 3, 2, K, demos, config,
                   tuple(f"key{k}" for k in range(K)), state_names, ("vx", "vy"))


def generate_dialpad_splits(n_train=1200, n_test=280, K=10, sketch_len=4, seed=0, noise=None):
    """Independent train and test sets drawn from separate seed streams."""
    train = generate_dialpad(n_train, K, sketch_len, seed, noise, stream="dialpad/train")
    test = generate_dialpad(n_test, K, sketch_len, seed, noise, stream="dialpad/test")
    return train, test


# ---------------------------------------------------------------- dataset ops

def split_dataset(dataset, train_fraction, seed):
    """Seeded per-trajectory partition into ``(train, test)``."""
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    if n < 2:
        raise ValidationError("need at least two trajectories to split")
    order = make_rng(seed, "shuffle", "split").permutation(n)
    n_train = min(max(int(round(n * train_fraction)), 1), n - 1)
    return dataset.subset(sorted(order[:n_train])), dataset.subset(sorted(order[n_train:]))


def strip_labels(dataset):
    return dataset.with_trajectories(replace(d, labels=None) for d in dataset)


def segments(dataset, label):
    """Maximal runs of timesteps carrying ``label``: a list of ``(states, actions)``."""
    out = []
    for demo in dataset:
        if demo.labels is None:
            raise ValidationError("segments need ground-truth labels")
        idx = np.flatnonzero(demo.labels == label)
        if idx.size == 0:
            continue
        breaks = np.flatnonzero(np.diff(idx) > 1) + 1
        for run in np.split(idx, breaks):
            out.append(Segment(demo.states[run], demo.actions[run], int(label), demo.index))
    return out


@dataclass
class Segment:
    states: np.ndarray
    actions: np.ndarray
    label: int
    source: int = 0


@dataclass
class Normalizer:
    """Per-dimension affine standardisation of states and actions."""

    state_mean: np.ndarray
    state_scale: np.ndarray
    action_mean: np.ndarray
    action_scale: np.ndarray

    @classmethod
    def fit(cls, dataset):
        S = np.concatenate([d.states for d in dataset])
        A = np.concatenate([d.actions for d in dataset])

        def scale(x):
            s = x.std(axis=0)
            return np.where(s > 1e-8, s, 1.0)

        return cls(S.mean(axis=0), scale(S), A.mean(axis=0), scale(A))

    @classmethod
    def identity(cls, state_dim, action_dim):
        return cls(np.zeros(state_dim), np.ones(state_dim), np.zeros(action_dim), np.ones(action_dim))

    def states(self, s):
        return (s - self.state_mean) / self.state_scale

    def actions(self, a):
        return (a - self.action_mean) / self.action_scale

    def unscale_actions(self, a):
        """Map standardised actions back to workspace units."""
        return np.asarray(a) * self.action_scale + self.action_mean

    def apply(self, dataset):
        return dataset.with_trajectories(
            replace(d, states=self.states(d.states), actions=self.actions(d.actions))
            for d in dataset)

    def to_json(self):
        return {k: getattr(self, k).tolist()
                for k in ("state_mean", "state_scale", "action_mean", "action_scale")}

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in obj.items()})
