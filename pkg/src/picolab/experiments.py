"""Config-driven experiment harness.

An :class:`ExperimentConfig` names an experiment kind, a domain, a seed list
and every hyperparameter. :func:`run_experiment` executes one pipeline per
seed (optionally in worker processes), then writes

* ``metrics.csv``    one row per (seed, method, condition)
* ``aggregate.csv``  mean and std over seeds per (method, condition)
* ``metrics_schema.json``, ``summary.txt``, ``config.json``
* ``manifest.json``  config hash, version, rows, file inventory, wall-clock
* ``seed-<s>/``      checkpoints and per-epoch training histories

Everything except ``manifest.json`` (which holds wall-clock time) is a pure
function of the config, so reruns produce byte-identical files.
"""

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from functools import lru_cache

import numpy as np

from . import __version__
from .alignment import train_ctc_baseline
from .envsim import (NoiseConfig, Normalizer, generate_blockworld, generate_dialpad, segments,
                     split_dataset)
from .errors import ValidationError
from .formats import ensure_dir, read_dataset, write_checkpoint
from .metrics import action_mse, evaluate, pca_project, silhouette
from .models import PicoNetwork, PrimitiveLibrary, add_gap_primitives
from .rng import derive_seed, make_rng
from .training import TrainConfig, discover_gaps, predict, pretrain_library, train_pico

KINDS = ("reconstruct", "gap_ablation", "compare_baselines", "latent")
DOMAINS = ("blockworld", "dialpad")

METRIC_COLUMNS = (
    ("experiment", "experiment kind"),
    ("domain", "demonstration domain"),
    ("condition", "library condition: all_pretrained or drop_<skill>"),
    ("method", "pico, ctc or random"),
    ("seed", "run seed (split, initialisation and shuffling streams)"),
    ("label_accuracy", "test labels matching ground truth / test timesteps"),
    ("action_mse", "test action MSE in workspace units"),
    ("action_mse_z", "test action MSE in standardised units (train-set z-scores)"),
    ("n_test_timesteps", "number of test timesteps"),
    ("gap_mse", "gap primitive MSE on test segments of the dropped skill, workspace units"),
    ("pretrained_mse", "pretrained primitive MSE on the same segments, workspace units"),
    ("gap_ratio", "gap_mse / pretrained_mse"),
    ("gap_recall", "fraction of the dropped skill's test timesteps labelled with a gap slot"),
)
AGGREGATE_KEYS = ("label_accuracy", "action_mse", "action_mse_z", "gap_mse", "pretrained_mse",
                  "gap_ratio", "gap_recall")


# ---------------------------------------------------------------- config

@dataclass
class OptimConfig:
    """Optimiser settings; ``batch`` is trajectories for sequence models and
    samples for per-timestep regressors."""

    epochs: int = 100
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 5.0
    batch: int = 8

    def train_config(self, seed, freeze_library=True):
        return TrainConfig(self.epochs, self.learning_rate, self.beta1, self.beta2, self.eps,
                           self.grad_clip_norm, int(seed), freeze_library, self.batch)


@dataclass
class DataConfig:
    n: int = 100
    train_fraction: float = 0.8
    t_min: int = 60
    t_max: int = 180
    K: int = 10
    sketch_len: int = 4
    n_train: int = 1200
    n_test: int = 280
    use_train: int = 240
    use_test: int = 56
    noise_std: float = 0.01
    data_seed: int = 0
    dir: str = None


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    widths: list = field(default_factory=lambda: [64, 64])


@dataclass
class GapConfig:
    n_gap: int = 1
    drop: list = None
    consolidate: OptimConfig = field(default_factory=lambda: OptimConfig(150, 3e-3, batch=256))
    refit: OptimConfig = field(default_factory=lambda: OptimConfig(20, 1e-3))


@dataclass
class ExperimentConfig:
    kind: str = "reconstruct"
    domain: str = "blockworld"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: OptimConfig = field(default_factory=lambda: OptimConfig(150, 3e-3, batch=256))
    train: OptimConfig = field(default_factory=lambda: OptimConfig(60, 3e-3))
    freeze_library: bool = True
    gap: GapConfig = field(default_factory=GapConfig)
    baseline: OptimConfig = field(default_factory=lambda: OptimConfig(20, 3e-3))
    baseline_clone: OptimConfig = field(default_factory=lambda: OptimConfig(60, 3e-3, batch=256))
    checkpoints: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.domain not in DOMAINS:
            raise ValidationError(f"unknown domain {self.domain!r}; choose from {DOMAINS}")
        if not self.seeds:
            raise ValidationError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seed list has duplicates")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ValidationError("seeds must be non-negative integers")
        for section in (self.pretrain, self.train, self.baseline, self.baseline_clone,
                        self.gap.consolidate, self.gap.refit):
            section.train_config(0)
        if not 0 < self.data.train_fraction < 1:
            raise ValidationError("train_fraction must lie strictly between 0 and 1")
        if self.gap.n_gap < 1:
            raise ValidationError("gap.n_gap must be at least 1")

    def to_dict(self):
        return asdict(self)

    def hash(self):
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def default_config(kind="reconstruct", domain="blockworld"):
    """Defaults tuned for each domain at desk scale."""
    if domain == "dialpad":
        return ExperimentConfig(kind=kind, domain=domain, seeds=[0, 1, 2],
                                pretrain=OptimConfig(60, 3e-3, batch=256),
                                train=OptimConfig(20, 3e-3), baseline=OptimConfig(20, 3e-3))
    if kind == "gap_ablation":
        return ExperimentConfig(kind=kind, domain=domain, train=OptimConfig(100, 3e-3))
    return ExperimentConfig(kind=kind, domain=domain)


def _overlay(obj, updates, path):
    if not isinstance(updates, dict):
        raise ValidationError(f"{path or 'config'} must be an object")
    names = {f.name: f for f in fields(obj)}
    unknown = set(updates) - set(names)
    if unknown:
        raise ValidationError(f"unknown config keys at {path or 'top level'}: {sorted(unknown)}")
    changes = {}
    for key, value in updates.items():
        current = getattr(obj, key)
        if is_dataclass(current):
            changes[key] = _overlay(current, value, f"{path}{key}.")
        else:
            changes[key] = value
    for key in ("seeds", "widths", "drop"):
        if changes.get(key) is not None:
            changes[key] = list(changes[key])
    return replace(obj, **changes)


def config_from_dict(d):
    """Overlay ``d`` on the defaults for its kind and domain; unknown keys are rejected."""
    if not isinstance(d, dict):
        raise ValidationError("config must be a JSON object")
    try:
        base = default_config(d.get("kind", "reconstruct"), d.get("domain", "blockworld"))
        return _overlay(base, d, "")
    except TypeError as exc:
        raise ValidationError(f"invalid config: {exc}") from exc


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed config ({exc})") from exc
    return config_from_dict(d)


# ---------------------------------------------------------------- data

@dataclass
class Splits:
    pretrain: object
    train: object
    test: object
    normalizer: Normalizer

    def z(self, name):
        return self.normalizer.apply(getattr(self, name))


def dataset_files(cfg):
    if cfg.domain == "blockworld":
        return {"all": "blockworld.jsonl"}
    return {"train": "dialpad-train.jsonl", "test": "dialpad-test.jsonl"}


def generate_data(cfg):
    """Full datasets named by :func:`dataset_files`, generated from ``cfg.data``."""
    d = cfg.data
    noise = NoiseConfig(d.noise_std)
    if cfg.domain == "blockworld":
        return {"all": generate_blockworld(d.n, d.data_seed, noise, (d.t_min, d.t_max))}
    return {"train": generate_dialpad(d.n_train, d.K, d.sketch_len, d.data_seed, noise,
                                      stream="dialpad/train"),
            "test": generate_dialpad(d.n_test, d.K, d.sketch_len, d.data_seed, noise,
                                     stream="dialpad/test")}


@lru_cache(maxsize=4)
def _cached_data(cfg_json):
    cfg = config_from_dict(json.loads(cfg_json))
    if cfg.data.dir:
        return {k: read_dataset(os.path.join(cfg.data.dir, v)) for k, v in dataset_files(cfg).items()}
    return generate_data(cfg)


def load_splits(cfg, seed):
    """Pretraining, training and test sets for one run seed.

    Blockworld: one pool split per seed, the library is pretrained on the
    training part. Dialpad: fixed train/test pools; the first ``use_train``
    and ``use_test`` trajectories are the experiment's split and the library
    is pretrained on the whole training pool.
    """
    key = json.dumps({"kind": cfg.kind, "domain": cfg.domain, "data": asdict(cfg.data)},
                     sort_keys=True)
    data = _cached_data(key)
    if cfg.domain == "blockworld":
        train, test = split_dataset(data["all"], cfg.data.train_fraction, seed)
        pretrain = train
    else:
        pool, test_pool = data["train"], data["test"]
        n_tr = min(cfg.data.use_train or len(pool), len(pool))
        n_te = min(cfg.data.use_test or len(test_pool), len(test_pool))
        pretrain, train, test = pool, pool.subset(range(n_tr)), test_pool.subset(range(n_te))
    if len(test) == 0:
        raise ValidationError("test set is empty")
    return Splits(pretrain, train, test, Normalizer.fit(pretrain))


# ---------------------------------------------------------------- evaluation

def _unscale_err(pred_z, true_z, norm):
    return ((np.asarray(pred_z) - np.asarray(true_z)) * norm.action_scale) ** 2


def evaluate_predictions(labels, actions_z, test_z, norm, K):
    """Metrics for predicted labels and standardised actions on a test set."""
    raw_pred = [norm.unscale_actions(a) for a in actions_z]
    raw_true = [norm.unscale_actions(d.actions) for d in test_z]
    report = evaluate(labels, [d.labels for d in test_z], raw_pred, raw_true, K)
    return {"label_accuracy": report.label_accuracy,
            "action_mse": float(np.mean(np.concatenate(
                [_unscale_err(a, d.actions, norm).ravel() for a, d in zip(actions_z, test_z)]))),
            "action_mse_z": action_mse(list(actions_z), [d.actions for d in test_z]),
            "n_test_timesteps": report.n_timesteps}


def evaluate_network(net, test_z, norm, K):
    preds = predict(net, test_z)
    return evaluate_predictions([p.labels for p in preds], [p.actions for p in preds],
                                test_z, norm, K), preds


def policy_segment_mse(policy, test_z, label, norm):
    segs = segments(test_z, label)
    if not segs:
        return float("nan")
    errs = [_unscale_err(policy.forward(s.states).value, s.actions, norm) for s in segs]
    return float(np.mean(np.concatenate([e.ravel() for e in errs])))


# ---------------------------------------------------------------- pipelines

def _row(cfg, seed, condition, method, metrics, **extra):
    row = {"experiment": cfg.kind, "domain": cfg.domain, "condition": condition,
           "method": method, "seed": seed}
    row.update(metrics)
    row.update(extra)
    return row


def _pretrain(cfg, splits, seed):
    pre_z = splits.z("pretrain")
    names = list(pre_z.label_names) or None
    return pretrain_library(pre_z, range(pre_z.n_labels), cfg.pretrain.train_config(seed),
                            NoiseConfig(cfg.data.noise_std), tuple(cfg.model.widths), names)


def _save(cfg, run_dir, name, net, splits, seed, history=None):
    if run_dir is None:
        return
    if cfg.checkpoints:
        write_checkpoint(net, os.path.join(run_dir, f"{name}.ckpt.json"), splits.normalizer,
                         {"seed": seed, "config_hash": cfg.hash()})
    if history is not None:
        histories = history if isinstance(history, list) else [history]
        with open(os.path.join(run_dir, f"{name}.history.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["stage", "epoch", "train_loss", "val_loss", "val_accuracy"])
            for stage, h in enumerate(histories):
                for e in range(len(h)):
                    w.writerow([stage, e, repr(h.train_loss[e]),
                                repr(h.val_loss[e]) if h.val_loss else "",
                                repr(h.val_accuracy[e]) if h.val_accuracy else ""])


def run_reconstruct(cfg, seed, run_dir=None, splits=None, library=None):
    splits = splits or load_splits(cfg, seed)
    train_z, test_z = splits.z("train"), splits.z("test")
    library = library or _pretrain(cfg, splits, seed)
    net = PicoNetwork.build(library, seed, cfg.model.hidden_dim)
    net, hist = train_pico(net, train_z, cfg.train.train_config(seed, cfg.freeze_library), test_z)
    metrics, preds = evaluate_network(net, test_z, splits.normalizer, test_z.n_labels)
    _save(cfg, run_dir, "all_pretrained", net, splits, seed, hist)
    return [_row(cfg, seed, "all_pretrained", "pico", metrics)], net, preds


def run_gap_ablation(cfg, seed, run_dir=None):
    splits = load_splits(cfg, seed)
    train_z, test_z = splits.z("train"), splits.z("test")
    library = _pretrain(cfg, splits, seed)
    rows, _, _ = run_reconstruct(cfg, seed, run_dir, splits, library)
    drop = cfg.gap.drop if cfg.gap.drop is not None else list(range(train_z.n_labels))
    for k in drop:
        name = train_z.label_names[k] if train_z.label_names else str(k)
        keep = PrimitiveLibrary([p for p in library if p.skill != k])
        lib = add_gap_primitives(keep, cfg.gap.n_gap, derive_seed(seed, k))
        gaps = [p for p in lib if p.origin == "gap"]
        for g in gaps:
            g.skill = k
        net = PicoNetwork.build(lib, derive_seed(seed, k), cfg.model.hidden_dim)
        net, hists = discover_gaps(net, train_z, cfg.train.train_config(seed, cfg.freeze_library),
                                   cfg.gap.consolidate.train_config(seed),
                                   cfg.gap.refit.train_config(seed), test_z)
        metrics, preds = evaluate_network(net, test_z, splits.normalizer, test_z.n_labels)
        gap_slots = [i for i, p in enumerate(net.library) if p.origin == "gap"]
        truth_k = np.concatenate([d.labels == k for d in test_z])
        claimed = np.concatenate([np.isin(p.slots, gap_slots) for p in preds])
        recall = float(claimed[truth_k].mean()) if truth_k.any() else float("nan")
        gap_mse = min(policy_segment_mse(g, test_z, k, splits.normalizer) for g in gaps)
        pre_mse = policy_segment_mse(library[k], test_z, k, splits.normalizer)
        condition = f"drop_{name}"
        _save(cfg, run_dir, condition, net, splits, seed, hists)
        rows.append(_row(cfg, seed, condition, "pico", metrics, gap_mse=gap_mse,
                         pretrained_mse=pre_mse, gap_ratio=gap_mse / pre_mse,
                         gap_recall=recall))
    return rows


def run_compare_baselines(cfg, seed, run_dir=None):
    splits = load_splits(cfg, seed)
    train_z, test_z = splits.z("train"), splits.z("test")
    rows, net, _ = run_reconstruct(cfg, seed, run_dir, splits)
    K = test_z.n_labels
    base = train_ctc_baseline(train_z, cfg.baseline.train_config(seed),
                              pretrain_cfg=cfg.baseline_clone.train_config(seed),
                              hidden_dim=cfg.model.hidden_dim, widths=tuple(cfg.model.widths),
                              clone_dataset=splits.z("pretrain"))
    labels, acts = zip(*(base.predict(d) for d in test_z))
    rows.append(_row(cfg, seed, "all_pretrained", "ctc",
                     evaluate_predictions(labels, acts, test_z, splits.normalizer, K)))
    rng = make_rng(seed, "random-baseline")
    labels, acts = [], []
    for d in test_z:
        lab = rng.integers(0, K, size=len(d))
        labels.append(lab)
        acts.append(net.library.forward_all(d.states).value[np.arange(len(d)), lab])
    rows.append(_row(cfg, seed, "all_pretrained", "random",
                     evaluate_predictions(labels, acts, test_z, splits.normalizer, K)))
    return rows


def latent_projection(net, test_z):
    """PCA of hidden states over a test set; returns ``(projection, silhouette)``."""
    if len(test_z) == 0:
        raise ValidationError("test set is empty")
    preds = predict(net, test_z)
    H = np.concatenate([p.hidden for p in preds])
    y = np.concatenate([d.labels for d in test_z])
    proj = pca_project(H, 2, y)
    score = silhouette(proj.coords, y) if len(np.unique(y)) > 1 else float("nan")
    return proj, score


def write_projection(proj, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for (x, y), lab in zip(proj.coords, proj.labels):
            w.writerow([repr(float(x)), repr(float(y)), int(lab)])


def run_latent(cfg, seed, run_dir=None):
    splits = load_splits(cfg, seed)
    rows, net, _ = run_reconstruct(cfg, seed, run_dir, splits)
    proj, score = latent_projection(net, splits.z("test"))
    if run_dir is not None:
        write_projection(proj, os.path.join(run_dir, "latent.csv"))
    rows[0]["silhouette"] = score
    rows[0]["explained_variance"] = float(proj.explained_variance_ratio.sum())
    return rows


PIPELINES = {"reconstruct": lambda c, s, d: run_reconstruct(c, s, d)[0],
             "gap_ablation": run_gap_ablation,
             "compare_baselines": run_compare_baselines,
             "latent": run_latent}


def run_seed(cfg_dict, seed, out):
    """Worker entry point: one seed of one experiment, in its own directory."""
    cfg = config_from_dict(cfg_dict)
    run_dir = ensure_dir(os.path.join(out, f"seed-{seed}")) if out else None
    return PIPELINES[cfg.kind](cfg, seed, run_dir)


# ---------------------------------------------------------------- reports

def metric_columns(rows):
    cols = [c for c, _ in METRIC_COLUMNS]
    extra = sorted({k for r in rows for k in r} - set(cols))
    return cols + extra


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _sort_key(r):
    return (r["condition"] != "all_pretrained", r["condition"], r["method"], r["seed"])


def aggregate(rows):
    groups = {}
    for r in sorted(rows, key=_sort_key):
        groups.setdefault((r["experiment"], r["domain"], r["condition"], r["method"]), []).append(r)
    out = []
    keys = [k for k in AGGREGATE_KEYS] + sorted({k for r in rows for k in r}
                                                 - {c for c, _ in METRIC_COLUMNS})
    for (exp, dom, cond, method), rs in groups.items():
        agg = {"experiment": exp, "domain": dom, "condition": cond, "method": method,
               "n_seeds": len(rs)}
        for k in keys:
            vals = [r[k] for r in rs if r.get(k) is not None]
            if vals:
                agg[f"{k}_mean"] = float(np.mean(vals))
                agg[f"{k}_std"] = float(np.std(vals))
        out.append(agg)
    return out


def csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def summary_table(agg_rows):
    head = f"{'condition':<18}{'method':<8}{'seeds':>6}{'label acc':>18}{'action MSE':>26}"
    lines = [head, "-" * len(head)]
    for r in agg_rows:
        acc = f"{r['label_accuracy_mean']:.3f} ± {r['label_accuracy_std']:.3f}"
        mse = f"{r['action_mse_mean']:.3e} ± {r['action_mse_std']:.1e}"
        lines.append(f"{r['condition']:<18}{r['method']:<8}{r['n_seeds']:>6}{acc:>18}{mse:>26}")
    return "\n".join(lines) + "\n"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


@dataclass
class RunResult:
    rows: list
    aggregate: list
    out: str
    manifest: dict


def run_experiment(cfg, threads=1, out=None, fmt="csv"):
    """Run every seed of ``cfg`` and write reports under ``out`` (or ``cfg.out``)."""
    out = ensure_dir(out or cfg.out)
    start = time.time()
    cfg_dict = cfg.to_dict()
    if threads > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_seed = list(pool.map(run_seed, [cfg_dict] * len(cfg.seeds), cfg.seeds,
                                     [out] * len(cfg.seeds)))
    else:
        per_seed = [run_seed(cfg_dict, s, out) for s in cfg.seeds]
    rows = sorted((r for rs in per_seed for r in rs), key=_sort_key)
    agg = aggregate(rows)
    files = write_reports(cfg, rows, agg, out, fmt)
    inventory = {}
    for root, _, names in os.walk(out):
        for n in sorted(names):
            p = os.path.join(root, n)
            rel = os.path.relpath(p, out)
            if rel != "manifest.json":
                inventory[rel] = _sha256(p)
    manifest = {"config_hash": cfg.hash(), "tool_version": __version__, "kind": cfg.kind,
                "domain": cfg.domain, "seeds": cfg.seeds, "rows": rows,
                "wall_clock_seconds": time.time() - start,
                "files": dict(sorted(inventory.items())), "reports": files}
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=_fmt)
        f.write("\n")
    return RunResult(rows, agg, out, manifest)


def write_reports(cfg, rows, agg, out, fmt="csv"):
    cols = metric_columns(rows)
    agg_cols = ["experiment", "domain", "condition", "method", "n_seeds"]
    agg_cols += sorted({k for r in agg for k in r} - set(agg_cols))
    written = []
    if fmt == "json":
        for name, data in (("metrics.json", rows), ("aggregate.json", agg)):
            with open(os.path.join(out, name), "w") as f:
                f.write(json.dumps(data, indent=2, sort_keys=True, default=_fmt) + "\n")
            written.append(name)
    else:
        for name, data, c in (("metrics.csv", rows, cols), ("aggregate.csv", agg, agg_cols)):
            with open(os.path.join(out, name), "w", newline="") as f:
                f.write(csv_text(data, c))
            written.append(name)
    schema = {"metrics": {c: d for c, d in METRIC_COLUMNS},
              "aggregate": "for each metric m: m_mean and m_std (population std) over seeds",
              "extra": {"silhouette": "silhouette of the 2-D PCA latent projection by true label",
                        "explained_variance": "variance fraction captured by the 2 components"}}
    with open(os.path.join(out, "metrics_schema.json"), "w") as f:
        f.write(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(summary_table(agg))
    with open(os.path.join(out, "config.json"), "w") as f:
        f.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return written + ["metrics_schema.json", "summary.txt", "config.json"]

