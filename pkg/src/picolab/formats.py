"""On-disk formats: line-delimited dataset files and JSON checkpoints.

Dataset file (``.jsonl``): the first line is a header object, every further
line is one trajectory::

    {"format": "picolab-dataset", "version": 1, "domain": ..., "state_dim": ...,
     "action_dim": ..., "n_labels": ..., "n_trajectories": ..., "config": {...},
     "label_names": [...], "state_names": [...], "action_names": [...]}
    {"index": 0, "seed": ..., "sketch": [...], "labels": [...] | null,
     "states": [[...], ...], "actions": [[...], ...], "noise": [[...], ...] | null}

Floats are written with Python's shortest round-trip repr, so reading a file
back reproduces every array bit for bit.

Checkpoint file (``.json``): a header describing dimensions, library slots
and gate width, then named parameter blocks ``{"shape": [...], "data": [...]}``
with row-major data.
"""

import json
import os

import numpy as np

from .envsim import Dataset, Demonstration, Normalizer
from .errors import DimensionError, ValidationError
from .models import Metacontroller, PicoNetwork, PrimitiveLibrary, PrimitivePolicy
from .diffcore import ParameterSet

DATASET_FORMAT = "picolab-dataset"
CHECKPOINT_FORMAT = "picolab-checkpoint"
FORMAT_VERSION = 1


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _check_header(header, kind):
    if not isinstance(header, dict) or header.get("format") != kind:
        raise ValidationError(f"not a {kind} file")
    if header.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported {kind} version {header.get('version')!r}")


# ---------------------------------------------------------------- datasets

def dataset_lines(dataset):
    header = {
        "format": DATASET_FORMAT, "version": FORMAT_VERSION,
        "domain": dataset.domain, "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim, "n_labels": dataset.n_labels,
        "n_trajectories": len(dataset), "config": dataset.config,
        "label_names": list(dataset.label_names), "state_names": list(dataset.state_names),
        "action_names": list(dataset.action_names),
    }
    yield _dumps(header)
    for d in dataset:
        yield _dumps({
            "index": int(d.index), "seed": int(d.seed), "domain": d.domain,
            "sketch": None if d.sketch is None else [int(k) for k in d.sketch],
            "labels": None if d.labels is None else [int(k) for k in d.labels],
            "states": np.asarray(d.states, dtype=np.float64).tolist(),
            "actions": np.asarray(d.actions, dtype=np.float64).tolist(),
            "noise": None if d.noise is None else np.asarray(d.noise, dtype=np.float64).tolist(),
        })


def write_dataset(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in dataset_lines(dataset):
            f.write(line)
            f.write("\n")


def _array(x, cols, what):
    if not len(x):
        return np.zeros((0, cols))
    if any(len(row) != cols for row in x):
        raise DimensionError(f"{what}: expected {cols} columns per row")
    return np.asarray(x, dtype=np.float64)


def read_dataset(path):
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f.read().split("\n") if line]
    if not lines:
        raise ValidationError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed dataset file ({exc})") from exc
    _check_header(header, DATASET_FORMAT)
    if header["n_trajectories"] != len(records):
        raise ValidationError(f"{path}: header promises {header['n_trajectories']} trajectories, "
                              f"found {len(records)}")
    S, A = header["state_dim"], header["action_dim"]
    demos = []
    for r in records:
        states = _array(r["states"], S, "states")
        actions = _array(r["actions"], A, "actions")
        if len(states) != len(actions):
            raise ValidationError(f"trajectory {r['index']}: states and actions differ in length")
        labels = None if r["labels"] is None else np.asarray(r["labels"], dtype=np.int64)
        noise = None if r["noise"] is None else _array(r["noise"], A, "noise")
        sketch = None if r["sketch"] is None else tuple(int(k) for k in r["sketch"])
        demos.append(Demonstration(states, actions, labels, sketch, r.get("domain", header["domain"]),
                                   int(r["seed"]), noise, int(r["index"])))
    return Dataset(header["domain"], S, A, header["n_labels"], demos, header["config"],
                   tuple(header["label_names"]), tuple(header["state_names"]),
                   tuple(header["action_names"]))


# ---------------------------------------------------------------- checkpoints

def _block(t):
    v = np.asarray(t.value, dtype=np.float64)
    return {"shape": list(v.shape), "data": v.ravel().tolist()}


def _unblock(b):
    data = np.asarray(b["data"], dtype=np.float64)
    shape = tuple(b["shape"])
    if data.size != int(np.prod(shape)):
        raise DimensionError(f"parameter block of shape {shape} holds {data.size} values")
    return data.reshape(shape)


def checkpoint_dict(network, normalizer=None, extra=None):
    ctrl = network.controller
    return {
        "format": CHECKPOINT_FORMAT, "version": FORMAT_VERSION,
        "state_dim": network.library.state_dim, "action_dim": network.library.action_dim,
        "K": network.n_primitives, "hidden_dim": ctrl.hidden_dim, "encoder_dim": ctrl.encoder_dim,
        "primitives": [{"id": p.id, "origin": p.origin,
                        "skill": None if p.skill is None else int(p.skill),
                        "widths": list(p.widths), "meta": p.meta, "frozen": p.frozen,
                        "params": {n: _block(t) for n, t in p.params.items()}}
                       for p in network.library],
        "controller": {n: _block(t) for n, t in ctrl.params.items()},
        "normalizer": None if normalizer is None else normalizer.to_json(),
        "extra": extra or {},
    }


def write_checkpoint(network, path, normalizer=None, extra=None):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(checkpoint_dict(network, normalizer, extra)))
        f.write("\n")


def _params(blocks, expected):
    ps = ParameterSet()
    for name, arr in expected.items():
        if name not in blocks:
            raise ValidationError(f"checkpoint lacks parameter {name!r}")
        value = _unblock(blocks[name])
        if value.shape != arr.shape:
            raise DimensionError(f"parameter {name!r}: shape {value.shape}, expected {arr.shape}")
        ps.add(name, value)
    extra = set(blocks) - set(expected)
    if extra:
        raise ValidationError(f"unexpected parameters {sorted(extra)}")
    return ps


def network_from_dict(obj):
    """Rebuild ``(network, normalizer, extra)`` from a checkpoint object."""
    _check_header(obj, CHECKPOINT_FORMAT)
    S, A = obj["state_dim"], obj["action_dim"]
    policies = []
    for p in obj["primitives"]:
        shell = PrimitivePolicy(p["id"], S, A, tuple(p["widths"]), p["origin"], p["skill"])
        params = _params(p["params"], {n: t.value for n, t in shell.params.items()})
        policy = PrimitivePolicy(p["id"], S, A, tuple(p["widths"]), p["origin"], p["skill"],
                                 params, dict(p["meta"]))
        if p.get("frozen"):
            policy.freeze()
        policies.append(policy)
    if len(policies) != obj["K"]:
        raise ValidationError(f"checkpoint header says K={obj['K']} but holds {len(policies)} primitives")
    shell = Metacontroller(S, obj["K"], obj["hidden_dim"], obj["encoder_dim"])
    ctrl = Metacontroller(S, obj["K"], obj["hidden_dim"], obj["encoder_dim"],
                          _params(obj["controller"], {n: t.value for n, t in shell.params.items()}))
    net = PicoNetwork(PrimitiveLibrary(policies), ctrl)
    norm = None if obj.get("normalizer") is None else Normalizer.from_json(obj["normalizer"])
    return net, norm, obj.get("extra", {})


def read_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed checkpoint ({exc})") from exc
    return network_from_dict(obj)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
