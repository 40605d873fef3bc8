import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fsrgan.learner import init_learner
from fsrgan.serialization import (
    SerializationError, decode_array, dumps, encode_array, load_network, load_stage, network_from_dict,
    network_to_dict, save_network, save_stage,
)


@given(arrays(np.float64, st.tuples(st.integers(0, 4), st.integers(1, 3)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_array_round_trip(a):
    b = decode_array(encode_array(a))
    assert b.shape == a.shape
    np.testing.assert_array_equal(b, a)
    assert encode_array(b) == encode_array(a)


def test_little_endian_encoding():
    rec = encode_array(np.array([1.0]))
    assert rec["dtype"] == "<f8"
    assert rec["data"] == "AAAAAAAA8D8="


def test_bad_array_record():
    with pytest.raises(SerializationError):
        decode_array({"dtype": "<f8", "shape": [2], "data": "AAAA"})


def test_target_byte_identical_round_trip(tiny_target, tmp_path):
    p1, p2 = tmp_path / "a.net.json", tmp_path / "b.net.json"
    save_network(tiny_target, p1)
    net = load_network(p1)
    save_network(net, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert json.loads(p1.read_text())["kind"] == "target"
    np.testing.assert_array_equal(net.V1, tiny_target.V1)
    assert net.V[0] is None and net.parents[0] is None


def test_learner_round_trip(tiny_target, tmp_path):
    L = init_learner(tiny_target.shape, tiny_target.W)
    L.meta["note"] = np.int64(3)
    d = network_to_dict(L)
    assert d["kind"] == "learner" and "alpha1" in d["arrays"]
    back = network_from_dict(json.loads(dumps(d)))
    np.testing.assert_array_equal(back.alpha1, L.alpha1)
    assert back.meta == {"note": 3}
    assert dumps(network_to_dict(back)) == dumps(d)


def test_rejects_foreign_documents(tmp_path):
    with pytest.raises(SerializationError):
        network_from_dict({"format": "other"})
    p = tmp_path / "x.net.json"
    p.write_text("{not json")
    with pytest.raises(SerializationError):
        load_network(p)
    with pytest.raises(SerializationError):
        load_network(tmp_path / "missing.net.json")


def test_stage_record(tiny_target, tmp_path):
    L = init_learner(tiny_target.shape, tiny_target.W)
    save_network(L, tmp_path / "s.net.json")
    save_stage(tmp_path / "s.stage.json", layer=0, stage=2, b=0.3, bb=0.2, checkpoint="s.net.json",
               metrics={"w": np.array([0.1])})
    rec, net = load_stage(tmp_path / "s.stage.json")
    assert rec["stage"] == 2 and rec["metrics"]["w"] == [0.1]
    np.testing.assert_array_equal(net.b[0], L.b[0])
    save_network(tiny_target, tmp_path / "s.net.json")
    with pytest.raises(SerializationError):
        load_stage(tmp_path / "s.stage.json")
