"""Dataset files, tensor files and model serialization.

All binary floats are 64-bit little-endian so roundtrips are exact.

Tensor file layout::

    b"STNS" | u32 version | u64 rows | u64 cols | rows*cols <f8, row-major

Model file layout::

    b"SINF" | u32 version | u64 header length | UTF-8 JSON header | <f8 payload

The JSON header describes the flow structure; the payload holds every basis
matrix and spline parameter array in the order the header lists them.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidDataError
from .flow import Flow, LogitTransform, PatchLayer, SinfLayer
from .patching import make_layout
from .spline import RegularizedMap, RQSpline

__all__ = [
    "Dataset",
    "read_csv",
    "write_csv",
    "read_tensor",
    "write_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "load_dataset",
    "serialize_flow",
    "deserialize_flow",
    "save_model",
    "load_model",
    "TENSOR_VERSION",
    "MODEL_VERSION",
]

TENSOR_MAGIC = b"STNS"
TENSOR_VERSION = 1
MODEL_MAGIC = b"SINF"
MODEL_VERSION = 1

_TENSOR_HEAD = struct.Struct("<4sIQQ")
_MODEL_HEAD = struct.Struct("<4sIQ")
_F8 = np.dtype("<f8")


# ---------------------------------------------------------------- CSV


def _parse_row(row, lineno):
    try:
        vals = [float(v) for v in row]
    except ValueError:
        return None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(f"row {lineno}: non-finite value")
    return vals


def read_csv(path):
    """Read a numeric CSV; the first row may be a header of column names."""
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [v.strip() for v in row]
            if not row or row == [""]:
                continue
            vals = _parse_row(row, lineno)
            if vals is None:
                if width is None and not rows:
                    width = len(row)  # header
                    continue
                raise FormatError(f"row {lineno}: non-numeric value")
            if width is None:
                width = len(vals)
            if len(vals) != width:
                raise FormatError(f"row {lineno}: expected {width} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def write_csv(path, X, header=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in X:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------- tensors


def tensor_to_bytes(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidDataError("tensor files hold 2D matrices")
    head = _TENSOR_HEAD.pack(TENSOR_MAGIC, TENSOR_VERSION, X.shape[0], X.shape[1])
    return head + np.ascontiguousarray(X, dtype=_F8).tobytes()


def tensor_from_bytes(buf):
    if len(buf) < _TENSOR_HEAD.size:
        raise FormatError("truncated tensor header")
    magic, version, rows, cols = _TENSOR_HEAD.unpack_from(buf)
    if magic != TENSOR_MAGIC:
        raise FormatError("not a tensor file (bad magic)")
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version} (expected {TENSOR_VERSION})")
    need = rows * cols * 8
    body = buf[_TENSOR_HEAD.size:]
    if len(body) != need:
        raise FormatError(f"tensor payload is {len(body)} bytes, expected {need}")
    return np.frombuffer(body, dtype=_F8).reshape(rows, cols).astype(np.float64)


def write_tensor(path, X):
    Path(path).write_bytes(tensor_to_bytes(X))


def read_tensor(path):
    return tensor_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- datasets


@dataclass
class Dataset:
    """Raw sample matrix plus the preprocessing a model should apply to it."""

    values: np.ndarray
    preprocess: LogitTransform = None

    @property
    def features(self):
        """Values in the space the flow layers act on."""
        if self.preprocess is None:
            return self.values
        return self.preprocess.forward(self.values)[0]


def _detect_format(path):
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == TENSOR_MAGIC else "csv"


def load_dataset(path, format=None, preprocess=None):
    """Load a CSV or tensor file.

    `preprocess` is None, ``"logit"`` (default squeeze) or a
    :class:`LogitTransform`; logit inputs must lie in [0, 1].
    """
    fmt = format or _detect_format(path)
    if fmt == "csv":
        X = read_csv(path)
    elif fmt == "binary":
        X = read_tensor(path)
    else:
        raise FormatError(f"unknown dataset format {fmt!r}")
    if preprocess == "logit":
        preprocess = LogitTransform()
    elif preprocess in (None, "none"):
        preprocess = None
    if preprocess is not None:
        preprocess.forward(X)  # range check
    return Dataset(X, preprocess)


# ---------------------------------------------------------------- models


def _dense_header(layer, arrays):
    arrays.append(layer.basis)
    maps = []
    for m in layer.maps:
        b = m.base
        arrays.extend([b.xs, b.ys, b.derivs])
        maps.append({"knots": int(b.xs.size), "alpha": [m.alpha_spline, m.alpha_tail]})
    return {"type": "dense", "K": layer.K, "maps": maps}


def _layer_header(layer, arrays):
    if isinstance(layer, SinfLayer):
        return _dense_header(layer, arrays)
    if isinstance(layer, PatchLayer):
        lay = layer.layout
        return {
            "type": "patch",
            "S": lay.S,
            "c": lay.c,
            "q": lay.q,
            "shift": list(lay.shift),
            "channel_mode": lay.channel_mode,
            "layers": [_dense_header(l, arrays) for l in layer.layers],
        }
    raise FormatError(f"cannot serialize layer of type {type(layer).__name__}")


def serialize_flow(flow):
    """Encode a flow as self-describing model-file bytes."""
    arrays = []
    header = {
        "direction": flow.direction,
        "d": flow.d,
        "image_shape": list(flow.image_shape) if flow.image_shape is not None else None,
        "preprocess": None if flow.preprocess is None else {"kind": "logit", "lam": flow.preprocess.lam},
        "layers": [_layer_header(l, arrays) for l in flow.layers],
    }
    payload = b"".join(np.ascontiguousarray(a, dtype=_F8).tobytes() for a in arrays)
    header["payload_bytes"] = len(payload)
    text = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return _MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, len(text)) + text + payload


class _Reader:
    def __init__(self, payload):
        self.values = np.frombuffer(payload, dtype=_F8)
        self.pos = 0

    def take(self, n):
        if self.pos + n > self.values.size:
            raise FormatError("model payload is shorter than its header describes")
        out = self.values[self.pos:self.pos + n].astype(np.float64)
        self.pos += n
        return out


def _dense_from(h, d, reader):
    K = int(h["K"])
    basis = reader.take(d * K).reshape(d, K)
    maps = []
    for m in h["maps"]:
        n = int(m["knots"])
        xs, ys, dv = reader.take(n), reader.take(n), reader.take(n)
        a1, a2 = (float(a) for a in m["alpha"])
        maps.append(RegularizedMap(RQSpline(xs, ys, dv), a1, a2))
    return SinfLayer(basis, maps)


def _layer_from(h, d, reader):
    if h["type"] == "dense":
        return _dense_from(h, d, reader)
    if h["type"] == "patch":
        layout = make_layout(h["S"], h["c"], h["q"], tuple(h["shift"]), h["channel_mode"])
        return PatchLayer(layout, [_dense_from(s, layout.patch_dim, reader) for s in h["layers"]])
    raise FormatError(f"unknown layer type {h['type']!r}")


def deserialize_flow(buf):
    """Decode model-file bytes; raises :class:`FormatError` on any defect."""
    buf = bytes(buf)
    if len(buf) < _MODEL_HEAD.size:
        raise FormatError("truncated model file")
    magic, version, hlen = _MODEL_HEAD.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version} (this build reads {MODEL_VERSION})")
    start = _MODEL_HEAD.size
    if len(buf) < start + hlen:
        raise FormatError("truncated model header")
    try:
        h = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt model header: {exc}") from None
    payload = buf[start + hlen:]
    try:
        if len(payload) != h["payload_bytes"] or len(payload) % 8:
            raise FormatError(f"model payload is {len(payload)} bytes, header says {h['payload_bytes']}")
        reader = _Reader(payload)
        d = int(h["d"])
        pre = h["preprocess"]
        flow = Flow(
            d,
            h["direction"],
            image_shape=tuple(h["image_shape"]) if h["image_shape"] is not None else None,
            preprocess=LogitTransform(pre["lam"]) if pre is not None else None,
        )
        for lh in h["layers"]:
            flow.append(_layer_from(lh, d, reader))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from None
    if reader.pos != reader.values.size:
        raise FormatError("model payload has trailing data")
    return flow


def save_model(flow, path):
    Path(path).write_bytes(serialize_flow(flow))


def load_model(path):
    return deserialize_flow(Path(path).read_bytes())
