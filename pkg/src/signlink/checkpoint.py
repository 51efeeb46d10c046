"""Deterministic checkpoint files.

Layout: b"SLCK", u32 format version, u64 header length, UTF-8 JSON header
(sorted keys), then the float64 little-endian payload. The header lists each
array as ``[name, shape, byte offset]``; arrays are stored in name order, so
save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import _atomic_write

MAGIC = b"SLCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)  # "m.<name>", "v.<name>", "t.<name>"
    step: int = 0
    fingerprint: str = ""
    config: dict = field(default_factory=dict)
    version: int = VERSION

    def to_bytes(self) -> bytes:
        arrays = {f"param.{k}": v for k, v in self.params.items()}
        arrays.update({f"opt.{k}": v for k, v in self.moments.items()})
        entries, chunks, offset = [], [], 0
        for name in sorted(arrays):
            a = np.asarray(arrays[name], dtype="<f8")
            entries.append([name, list(a.shape), offset])
            chunks.append(a.tobytes(order="C"))
            offset += a.nbytes
        header = json.dumps(
            {"version": self.version, "step": self.step, "fingerprint": self.fingerprint, "config": self.config, "arrays": entries},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        return _PREFIX.pack(MAGIC, self.version, len(header)) + header + b"".join(chunks)

    def save(self, path: str | Path) -> None:
        _atomic_write(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path: str | Path, expect_fingerprint: str | None = None, force: bool = False) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if len(raw) < _PREFIX.size:
            raise CheckpointError(f"{path}: truncated checkpoint")
        magic, version, hlen = _PREFIX.unpack_from(raw)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(raw[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
        body = raw[_PREFIX.size + hlen :]
        params, moments = {}, {}
        for name, shape, off in header["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            if off + 8 * n > len(body):
                raise CheckpointError(f"{path}: truncated payload at {name}")
            a = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            kind, _, key = name.partition(".")
            (params if kind == "param" else moments)[key] = a
        ckpt = cls(params, moments, header["step"], header["fingerprint"], header["config"], version)
        if expect_fingerprint is not None and ckpt.fingerprint != expect_fingerprint and not force:
            raise CheckpointError(
                f"{path}: config fingerprint {ckpt.fingerprint[:12]} does not match {expect_fingerprint[:12]}"
            )
        return ckpt
