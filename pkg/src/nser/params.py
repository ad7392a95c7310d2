"""Named parameter storage, SGD with momentum, and the binary checkpoint format."""

from __future__ import annotations

import io
import struct
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .tensor import DTYPE, Tensor

MAGIC = b"NSER\x01"


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered mapping of parameter name to leaf tensor, plus momentum buffers."""

    def __init__(self, dtype=DTYPE):
        self.dtype = np.dtype(dtype)
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.momentum: dict[str, np.ndarray] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = Tensor.param(data, name=name, dtype=self.dtype)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def arrays(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, t.data) for k, t in self._params.items())

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
            src = np.asarray(arrays[name])
            if src.shape != t.shape:
                raise CheckpointError(f"parameter {name!r}: shape {src.shape} != {t.shape}")
            t.data[...] = src


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.9) -> None:
    """theta <- theta - lr * v, with v <- momentum * v + grad; gradients are zeroed."""
    for name, t in store.items():
        if not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradientError(name)
    for name, t in store.items():
        g = t.grad
        if momentum:
            v = store.momentum.get(name)
            if v is None:
                v = store.momentum[name] = np.zeros_like(t.data)
            v *= t.dtype.type(momentum)
            v += g
            step = v
        else:
            step = g
        t.data -= t.dtype.type(lr) * step
        t.zero_grad()


# -- checkpoint format -------------------------------------------------------
#
# MAGIC | u32 manifest length | manifest (utf-8) | payload | u32 crc32(payload)
#
# manifest lines:  "kind <kind>", "meta <key> <value>",
#                  "param <name> <rank> <dim>... <byte_offset>"
# payload: row-major little-endian float32 arrays, concatenated.


def dump_checkpoint(
    arrays: Mapping[str, np.ndarray], kind: str, meta: Mapping[str, object] | None = None
) -> bytes:
    lines = [f"kind {kind}"]
    for key, value in (meta or {}).items():
        text = str(value)
        if any(c.isspace() for c in key) or "\n" in text:
            raise CheckpointError(f"invalid meta entry {key!r}")
        lines.append(f"meta {key} {text}")
    payload = io.BytesIO()
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        a = np.ascontiguousarray(arr, dtype="<f4")
        fields = ["param", name, str(a.ndim), *map(str, a.shape), str(payload.tell())]
        lines.append(" ".join(fields))
        payload.write(a.tobytes())
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    body = payload.getvalue()
    return b"".join(
        [MAGIC, struct.pack("<I", len(manifest)), manifest, body, struct.pack("<I", zlib.crc32(body))]
    )


def parse_checkpoint(blob: bytes) -> tuple[str, dict[str, str], OrderedDict[str, np.ndarray]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("bad magic: not a checkpoint file")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise CheckpointError("truncated checkpoint")
    (mlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    manifest = blob[pos : pos + mlen].decode("utf-8")
    payload = blob[pos + mlen : -4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checksum mismatch: payload is corrupt")
    kind = ""
    meta: dict[str, str] = {}
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for line in manifest.splitlines():
        head, _, rest = line.partition(" ")
        if head == "kind":
            kind = rest
        elif head == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif head == "param":
            fields = rest.split()
            name, rank = fields[0], int(fields[1])
            dims = tuple(int(x) for x in fields[2 : 2 + rank])
            offset = int(fields[2 + rank])
            count = int(np.prod(dims)) if dims else 1
            end = offset + 4 * count
            if end > len(payload):
                raise CheckpointError(f"parameter {name!r} runs past the payload")
            arrays[name] = np.frombuffer(payload[offset:end], dtype="<f4").reshape(dims).astype(DTYPE)
        elif line:
            raise CheckpointError(f"unrecognized manifest line {line!r}")
    return kind, meta, arrays


def save_checkpoint(path, arrays, kind: str, meta=None) -> None:
    Path(path).write_bytes(dump_checkpoint(arrays, kind, meta))


def load_checkpoint(path, expect_kind: str | None = None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    kind, meta, arrays = parse_checkpoint(path.read_bytes())
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path} holds a {kind!r} checkpoint, expected {expect_kind!r}")
    return kind, meta, arrays
