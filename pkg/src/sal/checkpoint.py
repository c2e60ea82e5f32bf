"""Versioned binary container for named float64 arrays plus a JSON header.

Layout (little-endian)::

    8s   magic b"SALCKPT\\0"
    u32  version
    u64  header length in bytes
    ...  header, UTF-8 JSON: {"kind", "config", "meta", "arrays": [{"name", "shape"}]}
    ...  arrays in header order, row-major float64
    32s  SHA-256 of every preceding byte

Used for network checkpoints and for latent tables keyed by shape id.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .mlp import MlpConfig, MlpParams

__all__ = ["save_arrays", "load_arrays", "save_mlp", "load_mlp", "CheckpointError"]

_MAGIC = b"SALCKPT\x00"
_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict, kind: str, config: dict = None, meta: dict = None):
    names = list(arrays)
    blobs = [np.array(arrays[k], dtype="<f8", order="C") for k in names]
    header = {
        "kind": kind,
        "config": config or {},
        "meta": meta or {},
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in zip(names, blobs)],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _MAGIC + struct.pack("<IQ", _VERSION, len(hb)) + hb + b"".join(a.tobytes() for a in blobs)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_arrays(path, kind: str = None):
    """Returns ``(arrays, header)``; raises :class:`CheckpointError` on corruption."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 52 or buf[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack("<IQ", body[8:20])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(body[20:20 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {header['kind']!r}")
    off = 20 + hlen
    arrays = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        arrays[spec["name"]] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(spec["shape"]).astype(np.float64)
        off += 8 * n
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after arrays")
    return arrays, header


def save_mlp(path, params: MlpParams, cfg: MlpConfig, meta: dict = None):
    params.check(cfg)
    save_arrays(path, params.as_dict(), "mlp", cfg.to_dict(), meta)


def load_mlp(path):
    """Returns ``(params, cfg, meta)``."""
    arrays, header = load_arrays(path, "mlp")
    cfg = MlpConfig.from_dict(header["config"])
    params = MlpParams.from_dict(arrays)
    params.check(cfg)
    return params, cfg, header["meta"]
