"""Evaluation metrics and latent-space analysis.

Label accuracy is micro-averaged: every timestep of every trajectory counts
once. Action MSE is the mean over timesteps, action dimensions and
trajectories. The latent view is a PCA projection of metacontroller hidden
states onto their top two principal directions.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, ValidationError


def _as_sequences(x):
    """A single sequence or a list of sequences -> list of 1-D+ arrays."""
    if isinstance(x, np.ndarray) and x.dtype != object:
        return [x]
    return [np.asarray(s) for s in x]


def _paired(pred, truth):
    pred, truth = _as_sequences(pred), _as_sequences(truth)
    if len(pred) != len(truth):
        raise ValidationError(f"{len(pred)} predicted sequences vs {len(truth)} true sequences")
    for i, (p, t) in enumerate(zip(pred, truth)):
        if p.shape != t.shape:
            raise ValidationError(f"sequence {i}: shapes {p.shape} and {t.shape} differ")
    return pred, truth


def label_accuracy(pred, truth):
    """Matching labels over all timesteps of all trajectories."""
    pred, truth = _paired(pred, truth)
    n = sum(t.size for t in truth)
    if n == 0:
        raise ValidationError("no labels to compare")
    return sum(int(np.sum(p == t)) for p, t in zip(pred, truth)) / n


def action_mse(pred, truth):
    """Mean squared error over every timestep and action dimension."""
    pred, truth = _paired(pred, truth)
    n = sum(t.size for t in truth)
    if n == 0:
        raise ValidationError("no actions to compare")
    return float(sum(np.sum((np.asarray(p, float) - np.asarray(t, float)) ** 2)
                     for p, t in zip(pred, truth)) / n)


def confusion_matrix(pred, truth, K):
    """``C[i, j]`` counts timesteps with true label ``i`` predicted as ``j``."""
    pred, truth = _paired(pred, truth)
    p = np.concatenate([np.ravel(x) for x in pred]).astype(np.int64)
    t = np.concatenate([np.ravel(x) for x in truth]).astype(np.int64)
    for name, v in (("predicted", p), ("true", t)):
        if v.size and (v.min() < 0 or v.max() >= K):
            raise ValidationError(f"{name} label outside [0, {K})")
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (t, p), 1)
    return C


@dataclass
class EvaluationReport:
    label_accuracy: float
    action_mse: float
    confusion: np.ndarray
    n_timesteps: int
    per_trajectory: list = field(default_factory=list)

    def row(self):
        return {"label_accuracy": self.label_accuracy, "action_mse": self.action_mse,
                "n_timesteps": self.n_timesteps}


def evaluate(pred_labels, true_labels, pred_actions, true_actions, K):
    """Accuracy, MSE and confusion with a per-trajectory breakdown."""
    pl, tl = _paired(pred_labels, true_labels)
    pa, ta = _paired(pred_actions, true_actions)
    if len(pl) != len(pa):
        raise ValidationError("label and action sequences cover different trajectories")
    per = [{"trajectory": i, "n_timesteps": int(t.size),
            "label_accuracy": label_accuracy(p, t), "action_mse": action_mse(q, r)}
           for i, (p, t, q, r) in enumerate(zip(pl, tl, pa, ta))]
    C = confusion_matrix(pl, tl, K)
    return EvaluationReport(label_accuracy(pl, tl), action_mse(pa, ta), C, int(C.sum()), per)


def random_labels(n, K, rng):
    """Uniform random labelling, the chance-level reference."""
    return rng.integers(0, K, size=n)


# ---------------------------------------------------------------- latent space

@dataclass
class LatentProjection:
    coords: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    labels: np.ndarray = None
    method: str = "pca"

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def pca_project(hiddens, components=2, labels=None):
    """Project rows of ``hiddens`` onto the top principal directions.

    Each component's largest-magnitude coordinate is made positive so the
    output is reproducible.
    """
    X = np.asarray(hiddens, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValidationError(f"need an N x d matrix with N, d >= 2, got shape {X.shape}")
    if components < 1 or components > X.shape[1]:
        raise ValidationError(f"components must lie in [1, {X.shape[1]}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    total = evals.sum()
    if not total > 0:
        raise DegenerateDataError("hidden states have zero variance in every direction")
    W = evecs[:, :components].T.copy()
    for row in W:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return LatentProjection(Xc @ W.T, evals[:components] / total, W, mean,
                            None if labels is None else np.asarray(labels))


def silhouette(coords, labels):
    """Mean silhouette coefficient with Euclidean distances."""
    X = np.asarray(coords, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValidationError("silhouette needs at least two clusters")
    s = np.zeros(len(X))
    for i in range(len(X)):
        d = np.sqrt(((X - X[i]) ** 2).sum(-1))
        same = y == y[i]
        n_same = same.sum() - 1
        if n_same == 0:
            continue
        a = d[same].sum() / n_same
        b = min(d[y == c].mean() for c in classes if c != y[i])
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(s.mean())
