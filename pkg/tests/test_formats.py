import json

import numpy as np
import pytest

from picolab.envsim import Normalizer, generate_dialpad
from picolab.errors import DimensionError, ValidationError
from picolab.formats import (checkpoint_dict, network_from_dict, read_checkpoint, read_dataset,
                             write_checkpoint, write_dataset)
from picolab.models import PicoNetwork, PrimitiveLibrary, PrimitivePolicy
from picolab.rng import make_rng


def small_net(S=12, A=3, gap=True):
    rng = make_rng(0, "test", "fmt")
    lib = PrimitiveLibrary([PrimitivePolicy.random(f"p{k}", S, A, rng, (6, 5), skill=k) for k in range(2)])
    lib[0].freeze()
    net = PicoNetwork.build(lib, 0, hidden_dim=4)
    return net.add_gap_primitives(1, seed=3) if gap else net


def test_dataset_roundtrip_bitwise(tmp_path, blockworld_small):
    path = tmp_path / "d.jsonl"
    write_dataset(blockworld_small, path)
    back = read_dataset(path)
    assert back.config == blockworld_small.config
    assert back.state_names == blockworld_small.state_names
    for a, b in zip(blockworld_small, back):
        for f in ("states", "actions", "labels", "noise"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
        assert a.sketch == b.sketch and a.seed == b.seed and a.index == b.index


def test_dataset_file_is_deterministic(tmp_path, blockworld_small):
    write_dataset(blockworld_small, tmp_path / "a.jsonl")
    write_dataset(blockworld_small, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_dialpad_roundtrip(tmp_path):
    ds = generate_dialpad(3, K=4, sketch_len=2, seed=0)
    write_dataset(ds, tmp_path / "d.jsonl")
    back = read_dataset(tmp_path / "d.jsonl")
    assert [d.sketch for d in back] == [d.sketch for d in ds]


def test_dataset_header_checks(tmp_path, blockworld_small):
    path = tmp_path / "d.jsonl"
    write_dataset(blockworld_small.subset([0, 1]), path)
    lines = path.read_text().splitlines()
    head = json.loads(lines[0])

    def write(h, body):
        path.write_text("\n".join([json.dumps(h)] + body) + "\n")

    write(dict(head, version=99), lines[1:])
    with pytest.raises(ValidationError, match="version"):
        read_dataset(path)
    write(dict(head, format="other"), lines[1:])
    with pytest.raises(ValidationError):
        read_dataset(path)
    write(head, lines[1:2])
    with pytest.raises(ValidationError, match="promises"):
        read_dataset(path)
    write(dict(head, state_dim=5), lines[1:])
    with pytest.raises(DimensionError):
        read_dataset(path)
    path.write_text("{not json\n")
    with pytest.raises(ValidationError):
        read_dataset(path)
    path.write_text("")
    with pytest.raises(ValidationError):
        read_dataset(path)


def test_checkpoint_roundtrip(tmp_path, blockworld_small):
    net = small_net()
    norm = Normalizer.fit(blockworld_small)
    path = tmp_path / "c.json"
    write_checkpoint(net, path, norm, {"seed": 7})
    back, norm2, extra = read_checkpoint(path)
    assert extra == {"seed": 7}
    assert back.library.ids == net.library.ids
    assert [p.origin for p in back.library] == ["pretrained", "pretrained", "gap"]
    assert [p.frozen for p in back.library] == [True, False, False]
    a, b = net.parameters(), back.parameters()
    assert a.names() == b.names()
    for name, t in a.items():
        assert t.value.tobytes() == b[name].value.tobytes()
    x = np.random.default_rng(0).normal(size=(2, 5, 12))
    assert net.forward(x).blended.value.tobytes() == back.forward(x).blended.value.tobytes()
    assert norm2.state_scale.tobytes() == norm.state_scale.tobytes()


def test_checkpoint_rejects_unknown_version():
    obj = checkpoint_dict(small_net())
    obj["version"] = 2
    with pytest.raises(ValidationError):
        network_from_dict(obj)


def test_checkpoint_rejects_missing_and_extra_params():
    obj = checkpoint_dict(small_net())
    del obj["controller"]["gate.bias"]
    with pytest.raises(ValidationError, match="gate.bias"):
        network_from_dict(obj)
    obj = checkpoint_dict(small_net())
    obj["primitives"][0]["params"]["fc9.weight"] = {"shape": [1], "data": [0.0]}
    with pytest.raises(ValidationError):
        network_from_dict(obj)


def test_checkpoint_rejects_bad_shapes():
    obj = checkpoint_dict(small_net())
    obj["controller"]["gate.bias"]["data"].append(1.0)
    with pytest.raises(DimensionError):
        network_from_dict(obj)
    obj = checkpoint_dict(small_net())
    obj["K"] = 5
    with pytest.raises(ValidationError):
        network_from_dict(obj)


def test_malformed_checkpoint_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ValidationError):
        read_checkpoint(p)
