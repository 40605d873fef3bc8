"""JSON checkpoints: ``.net.json`` networks and ``stage.json`` stage records.

Arrays are stored as base64 of their little-endian bytes next to dtype and
shape, so a write-read-write cycle is byte-identical. Floats outside arrays
are written by :mod:`json`, which uses the shortest round-tripping repr.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .learner import LearnerNetwork
from .target import NetworkShape, TargetNetwork

__all__ = [
    "SerializationError", "encode_array", "decode_array", "network_to_dict", "network_from_dict",
    "save_network", "load_network", "save_stage", "load_stage", "dumps",
]

FORMAT = "fsrgan.net"
VERSION = 1


class SerializationError(ValueError):
    """Malformed or incompatible checkpoint."""


def encode_array(a) -> dict:
    a = np.asarray(a)
    if a.dtype.kind == "f":
        a = a.astype("<f8")
    elif a.dtype.kind in "iub":
        a = a.astype("<i8")
    else:
        raise SerializationError(f"cannot encode dtype {a.dtype}")
    return {"dtype": a.dtype.str, "shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"], validate=True)
        a = np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SerializationError(f"bad array record: {exc}") from exc
    return a.astype(a.dtype.newbyteorder("="))


def _layered(name: str, arrays: list, out: dict):
    for l, a in enumerate(arrays):
        if a is not None:
            out[f"{name}.{l}"] = encode_array(a)


def _unlayered(name: str, arrays: dict, L: int) -> list:
    return [decode_array(arrays[f"{name}.{l}"]) if f"{name}.{l}" in arrays else None for l in range(L)]


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def network_to_dict(net) -> dict:
    if isinstance(net, TargetNetwork):
        kind = "target"
    elif isinstance(net, LearnerNetwork):
        kind = "learner"
    else:
        raise SerializationError(f"unsupported object {type(net).__name__}")
    arrays: dict = {}
    for name in ("W", "V", "b", "parents"):
        _layered(name, getattr(net, name), arrays)
    if kind == "target":
        arrays["V1"] = encode_array(net.V1)
    else:
        arrays["V1_dir"] = encode_array(net.V1_dir)
        arrays["alpha1"] = encode_array(net.alpha1)
    return {"format": FORMAT, "version": VERSION, "kind": kind, "shape": net.shape.to_dict(),
            "arrays": arrays, "meta": _json_safe(net.meta)}


def network_from_dict(d: dict):
    if d.get("format") != FORMAT or d.get("version") != VERSION:
        raise SerializationError("not a version-1 network document")
    try:
        shape = NetworkShape.from_dict(d["shape"])
        arrays, L = d["arrays"], shape.L
        common = {name: _unlayered(name, arrays, L) for name in ("W", "V", "b", "parents")}
        meta = dict(d.get("meta", {}))
        if d["kind"] == "target":
            return TargetNetwork(shape=shape, V1=decode_array(arrays["V1"]), meta=meta, **common)
        if d["kind"] == "learner":
            return LearnerNetwork(shape=shape, V1_dir=decode_array(arrays["V1_dir"]),
                                  alpha1=decode_array(arrays["alpha1"]), meta=meta, **common)
    except (KeyError, TypeError, ValueError) as exc:
        raise SerializationError(f"bad network document: {exc}") from exc
    raise SerializationError(f"unknown kind {d.get('kind')!r}")


def dumps(obj) -> str:
    return json.dumps(_json_safe(obj), sort_keys=True, indent=1) + "\n"


def save_network(net, path) -> None:
    Path(path).write_text(dumps(network_to_dict(net)))


def load_network(path):
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise SerializationError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise SerializationError(f"{path}: {exc}") from exc
    return network_from_dict(d)


def save_stage(path, *, layer: int, stage: int, b: float, bb, checkpoint: str, metrics: dict | None = None) -> None:
    """Stage record; ``layer`` is 0-based and ``checkpoint`` is relative to the record's folder."""
    Path(path).write_text(dumps({"layer": layer, "stage": stage, "b": b, "bb": bb,
                                 "checkpoint": checkpoint, "metrics": metrics or {}}))


def load_stage(path) -> tuple[dict, LearnerNetwork]:
    """Read a stage record and the learner checkpoint it points to."""
    path = Path(path)
    try:
        rec = json.loads(path.read_text())
    except OSError as exc:
        raise SerializationError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise SerializationError(f"{path}: {exc}") from exc
    for key in ("layer", "stage", "b", "checkpoint"):
        if key not in rec:
            raise SerializationError(f"{path}: missing {key!r}")
    net = load_network(path.parent / rec["checkpoint"])
    if not isinstance(net, LearnerNetwork):
        raise SerializationError(f"{rec['checkpoint']} is not a learner checkpoint")
    return rec, net
