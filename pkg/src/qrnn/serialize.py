"""Versioned JSON encoding of graphs and tensors.

Layout: ``{"version": 1, "graph": {...}}``. Non-finite floats are written as
the strings ``"inf"``, ``"-inf"`` and ``"nan"`` so the output stays strict JSON.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import ParseError, SchemaVersionError
from .ir import DataType, Graph, Node, Tensor, ValueInfo

SCHEMA_VERSION = 1
ARRAY_ATTRS = {"thresholds"}
_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def _num(v):
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


def _array_to_json(arr: np.ndarray, is_int: bool):
    if is_int:
        return arr.astype(np.int64).tolist()
    flat = [_num(v) for v in np.asarray(arr, dtype=np.float64).ravel()]
    return np.array(flat, dtype=object).reshape(arr.shape).tolist() if arr.ndim else flat[0]


def dtype_to_json(dt: DataType) -> dict:
    if dt.is_int:
        return {"kind": "INT", "bits": dt.bits, "signed": dt.signed}
    return {"kind": "FLOAT"}


def tensor_to_json(t: Tensor) -> dict:
    flat = t.values.ravel()
    values = flat.tolist() if t.dtype.is_int else [_num(v) for v in flat]
    return {"shape": list(t.shape), "dtype": dtype_to_json(t.dtype), "values": values}


def _attr_to_json(key, v):
    if isinstance(v, Graph):
        return graph_to_json(v)
    if isinstance(v, Tensor):
        return tensor_to_json(v)
    if isinstance(v, DataType):
        return dtype_to_json(v)
    if isinstance(v, np.ndarray):
        return _array_to_json(v, v.dtype.kind in "iu")
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    if isinstance(v, float):
        return _num(v)
    if isinstance(v, (list, tuple)):
        return [_attr_to_json(key, x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return _num(v)
    raise TypeError(f"attribute {key!r} has unserializable type {type(v).__name__}")


def graph_to_json(g: Graph) -> dict:
    return {
        "name": g.name,
        "inputs": [{"name": vi.name, "shape": list(vi.shape),
                    "dtype": dtype_to_json(vi.dtype)} for vi in g.inputs],
        "outputs": list(g.outputs),
        "initializers": {k: tensor_to_json(t) for k, t in g.initializers.items()},
        "nodes": [{"op_type": n.op_type, "name": n.name,
                   "inputs": list(n.inputs), "outputs": list(n.outputs),
                   "attributes": {k: _attr_to_json(k, v)
                                  for k, v in n.attributes.items()}}
                  for n in g.nodes],
        "value_info": {k: {"shape": list(vi.shape), "dtype": dtype_to_json(vi.dtype)}
                       for k, vi in g.value_info.items()},
    }


def serialize(graph: Graph) -> bytes:
    doc = {"version": SCHEMA_VERSION, "graph": graph_to_json(graph)}
    return json.dumps(doc, indent=1, allow_nan=False).encode("utf-8")


# ---------------------------------------------------------------------------
# decoding

def _req(d, key, path):
    if not isinstance(d, dict):
        raise ParseError(f"expected an object at {path}")
    if key not in d:
        raise ParseError(f"missing key {key!r} at {path}")
    return d[key]


def _float(v, path):
    if isinstance(v, str):
        if v not in _NONFINITE:
            raise ParseError(f"bad number {v!r} at {path}")
        return _NONFINITE[v]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"expected a number at {path}")
    return float(v)


def dtype_from_json(d, path="dtype") -> DataType:
    kind = _req(d, "kind", path)
    try:
        if kind == "INT":
            return DataType.int(int(_req(d, "bits", path)), bool(d.get("signed", True)))
        return DataType(kind)
    except ValueError as e:
        raise ParseError(f"{e} at {path}") from None


def tensor_from_json(d, path="tensor") -> Tensor:
    shape = _req(d, "shape", path)
    dt = dtype_from_json(_req(d, "dtype", path), path + ".dtype")
    values = _req(d, "values", path)
    if not isinstance(values, list) or not isinstance(shape, list):
        raise ParseError(f"shape and values must be lists at {path}")
    if not dt.is_int:
        values = [_float(v, f"{path}.values[{i}]") for i, v in enumerate(values)]
    try:
        return Tensor.from_flat(shape, dt, values)
    except (ValueError, TypeError) as e:
        raise ParseError(f"{e} at {path}") from None


def _nested_floats(v, path):
    if isinstance(v, list):
        return [_nested_floats(x, f"{path}[{i}]") for i, x in enumerate(v)]
    return _float(v, path)


def _attr_from_json(key, v, path):
    if key in ARRAY_ATTRS:
        return np.asarray(_nested_floats(v, path), dtype=np.float64)
    if isinstance(v, dict):
        if "nodes" in v:
            return graph_from_json(v, path)
        if "values" in v and "shape" in v:
            return tensor_from_json(v, path)
        if "kind" in v:
            return dtype_from_json(v, path)
        raise ParseError(f"unrecognised attribute object at {path}")
    if isinstance(v, str) and v in _NONFINITE:
        return _NONFINITE[v]
    return v


def graph_from_json(d, path="graph") -> Graph:
    inputs = []
    for i, vi in enumerate(_req(d, "inputs", path)):
        p = f"{path}.inputs[{i}]"
        inputs.append(ValueInfo(_req(vi, "name", p), tuple(_req(vi, "shape", p)),
                                dtype_from_json(_req(vi, "dtype", p), p + ".dtype")))
    inits = {k: tensor_from_json(t, f"{path}.initializers.{k}")
             for k, t in _req(d, "initializers", path).items()}
    nodes = []
    for i, nd in enumerate(_req(d, "nodes", path)):
        p = f"{path}.nodes[{i}]"
        attrs = {k: _attr_from_json(k, v, f"{p}.attributes.{k}")
                 for k, v in nd.get("attributes", {}).items()}
        nodes.append(Node(_req(nd, "op_type", p), _req(nd, "name", p),
                          list(_req(nd, "inputs", p)), list(_req(nd, "outputs", p)),
                          attrs))
    value_info = {}
    for k, vi in d.get("value_info", {}).items():
        p = f"{path}.value_info.{k}"
        value_info[k] = ValueInfo(k, tuple(_req(vi, "shape", p)),
                                  dtype_from_json(_req(vi, "dtype", p), p))
    return Graph(name=d.get("name", "graph"), inputs=inputs,
                 outputs=list(_req(d, "outputs", path)), initializers=inits,
                 nodes=nodes, value_info=value_info)


def load_json(data: bytes | str):
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"input is not UTF-8: {e}", 1, e.start) from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None


def deserialize(data: bytes | str) -> Graph:
    doc = load_json(data)
    version = _req(doc, "version", "document")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported graph schema version {version!r}")
    return graph_from_json(_req(doc, "graph", "document"))


def save_graph(graph: Graph, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(graph))


def load_graph(path) -> Graph:
    with open(path, "rb") as f:
        return deserialize(f.read())


def tensors_to_json(tensors: dict) -> bytes:
    doc = {k: tensor_to_json(t) for k, t in tensors.items()}
    return json.dumps(doc, indent=1, allow_nan=False).encode("utf-8")


def tensors_from_json(data: bytes | str) -> dict:
    doc = load_json(data)
    if not isinstance(doc, dict):
        raise ParseError("tensor file must hold an object of named tensors")
    return {k: tensor_from_json(v, k) for k, v in doc.items()}
