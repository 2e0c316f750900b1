"""Writer and reader for the digest-verified tensor container format.

This is the interchange format consumed by the training library, so the
byte layout is fixed:

    magic b"RTRG" | u32 format version | u64 header length | header JSON | payload

The header JSON holds a SHA-256 digest of the payload, free-form
metadata, and a tensor manifest (name, dtype code, shape, payload
offset, byte count).  It is serialized canonically (sorted keys, fixed
separators) and tensors are laid out in insertion order, so writing the
same tensors and metadata twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

MAGIC = b"RTRG"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class ContainerError(RuntimeError):
    """Malformed, corrupted or incompatible container file."""


class Container:
    """Named tensors plus metadata; digest is the payload SHA-256."""

    def __init__(self, tensors: dict[str, np.ndarray], metadata: dict, digest: str = ""):
        self.tensors = dict(tensors)
        self.metadata = dict(metadata)
        self.digest = digest

    def tensor(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise ContainerError(f"container is missing tensor {name!r}")
        return self.tensors[name]


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_container(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        else:
            raise ContainerError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr.astype(_DTYPES[code], copy=False)).tobytes()
        manifest.append({
            "name": name,
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "digest": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata,
        "tensors": manifest,
    }
    hdr = _canonical_json(header)
    return MAGIC + FORMAT_VERSION.to_bytes(4, "little") + len(hdr).to_bytes(8, "little") + hdr + payload


def write_container(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Atomically write a container (temp file + rename)."""
    blob = encode_container(tensors, metadata or {})
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path) -> Container:
    """Load and verify a container; raises ContainerError on any defect."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise ContainerError(f"container file not found: {path}") from None

    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ContainerError(f"{path}: not a tensor container (bad magic)")
    version = int.from_bytes(blob[4:8], "little")
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported container version {version} "
                             f"(expected {FORMAT_VERSION})")
    hdr_len = int.from_bytes(blob[8:16], "little")
    if 16 + hdr_len > len(blob):
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: corrupt header ({e})") from None

    payload = blob[16 + hdr_len:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("digest"):
        raise ContainerError(f"{path}: payload digest mismatch "
                             f"(stored {header.get('digest')!r}, actual {digest!r})")

    tensors: dict[str, np.ndarray] = {}
    prev_end = 0
    for entry in header.get("tensors", []):
        name, code = entry["name"], entry["dtype"]
        if code not in _DTYPES:
            raise ContainerError(f"{path}: tensor {name!r} has unknown dtype {code!r}")
        offset, nbytes = entry["offset"], entry["nbytes"]
        if offset != prev_end or offset + nbytes > len(payload):
            raise ContainerError(f"{path}: tensor {name!r} has an out-of-bounds or "
                                 f"overlapping payload range")
        prev_end = offset + nbytes
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype=_DTYPES[code])
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise ContainerError(f"{path}: tensor {name!r} byte count does not match shape {shape}")
        tensors[name] = arr.reshape(shape).copy()
    if prev_end != len(payload):
        raise ContainerError(f"{path}: payload has {len(payload) - prev_end} trailing bytes")

    return Container(tensors, header.get("metadata", {}), digest=digest)
