"""Binary model checkpoints.

Layout (little-endian)::

    magic b"OSAM" | version u16 | layer count u32 | input ndim u8 | input shape u32*
    per layer:  spec length u32 | spec JSON (UTF-8, sorted keys)
                tensor count u8 | per tensor: name length u8 | name
                                  | ndim u8 | shape u32* | data f32
    trailer CRC-32 (u32) of every preceding byte

Tensors are the layer's parameters followed by its state (batchnorm running
statistics), each in sorted key order.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, FormatError
from .layers import layer_from_spec
from .model import Sequential

MAGIC = b"OSAM"
VERSION = 1


def _tensors(layer):
    out = [(k, layer.params[k]) for k in sorted(layer.params)]
    return out + [(k, layer.state[k]) for k in sorted(layer.state)]


def model_to_bytes(model: Sequential, meta: dict | None = None) -> bytes:
    shape = model.input_shape or ()
    buf = [struct.pack("<4sHIB", MAGIC, VERSION, len(model.layers), len(shape))]
    buf.append(struct.pack(f"<{len(shape)}I", *shape))
    for layer in model.layers:
        spec = layer.spec()
        if meta and layer is model.layers[0]:
            spec = {**spec, "_meta": meta}
        blob = json.dumps(spec, sort_keys=True).encode()
        buf.append(struct.pack("<I", len(blob)) + blob)
        tensors = _tensors(layer)
        buf.append(struct.pack("<B", len(tensors)))
        for name, arr in tensors:
            key = name.encode()
            buf.append(struct.pack(f"<B{len(key)}sB", len(key), key, arr.ndim))
            buf.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(buf)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(model: Sequential, path, meta: dict | None = None) -> None:
    """Write ``model``; ``meta`` (JSON-serializable) rides along with layer 0."""
    Path(path).write_bytes(model_to_bytes(model, meta))


def model_from_bytes(raw: bytes, dtype=np.float32):
    """Return ``(model, meta)``."""
    if len(raw) < 15:
        raise FormatError("checkpoint truncated")
    body, trailer = raw[:-4], raw[-4:]
    if zlib.crc32(body) != struct.unpack("<I", trailer)[0]:
        raise ChecksumError("checkpoint CRC-32 mismatch")
    magic, version, n_layers, ndim = struct.unpack_from("<4sHIB", body)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = struct.calcsize("<4sHIB")
    shape = struct.unpack_from(f"<{ndim}I", body, off)
    off += 4 * ndim
    layers, meta = [], {}
    try:
        for _ in range(n_layers):
            (n,) = struct.unpack_from("<I", body, off)
            spec = json.loads(body[off + 4 : off + 4 + n])
            off += 4 + n
            meta = spec.pop("_meta", meta)
            layer = layer_from_spec(spec)
            (count,) = struct.unpack_from("<B", body, off)
            off += 1
            for _ in range(count):
                (klen,) = struct.unpack_from("<B", body, off)
                name = body[off + 1 : off + 1 + klen].decode()
                off += 1 + klen
                (nd,) = struct.unpack_from("<B", body, off)
                dims = struct.unpack_from(f"<{nd}I", body, off + 1)
                off += 1 + 4 * nd
                size = int(np.prod(dims))
                arr = np.frombuffer(body, "<f4", size, off).reshape(dims).astype(dtype)
                off += 4 * size
                target = layer.params if name in layer.params else layer.state
                if name not in target:
                    raise FormatError(f"unknown tensor {name!r} for {layer.kind}")
                target[name] = arr
            layers.append(layer)
    except (ValueError, struct.error, json.JSONDecodeError) as exc:
        raise FormatError("checkpoint truncated or corrupt") from exc
    if off != len(body):
        raise FormatError("trailing bytes in checkpoint")
    return Sequential(layers, input_shape=shape or None), meta


def load_model(path, dtype=np.float32):
    return model_from_bytes(Path(path).read_bytes(), dtype)
