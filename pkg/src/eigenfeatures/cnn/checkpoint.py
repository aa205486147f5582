"""Trained-network container and its ``MCNN`` file format.

Layout (little-endian): ``b"MCNN"``, u16 version, u32-length-prefixed
canonical JSON header (config, metadata, parameter names and shapes), every
parameter as float64 in declaration order, u32 CRC32 of all preceding bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..container import frame, pack_text, unframe, unpack_text, write_atomic
from ..errors import CorruptPayloadError
from .config import NetworkConfig
from .network import Network, param_names

MAGIC = b"MCNN"
VERSION = 1


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict
    meta: dict = field(default_factory=dict)

    def network(self) -> Network:
        # copies so inference never mutates the stored parameters
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    def to_bytes(self) -> bytes:
        names = param_names(self.config)
        header = {
            "config": self.config.to_dict(),
            "meta": self.meta,
            "params": [[n, list(self.params[n].shape)] for n in names],
        }
        text = json.dumps(header, sort_keys=True, separators=(",", ":"))
        payload = b"".join(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes() for n in names)
        return frame(MAGIC, VERSION, pack_text(text) + payload)

    @classmethod
    def from_bytes(cls, blob: bytes) -> Checkpoint:
        body = unframe(blob, MAGIC, VERSION)
        text, offset = unpack_text(body, 0)
        try:
            header = json.loads(text)
            config = NetworkConfig.from_dict(header["config"])
            layout = header["params"]
        except (ValueError, KeyError) as exc:
            raise CorruptPayloadError(f"unreadable checkpoint header: {exc}") from None
        if [n for n, _ in layout] != param_names(config):
            raise CorruptPayloadError("parameter layout does not match the configuration")
        params = {}
        for name, shape in layout:
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(body):
                raise CorruptPayloadError("parameter payload is truncated")
            params[name] = np.frombuffer(body[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            offset = end
        if offset != len(body):
            raise CorruptPayloadError("trailing bytes after parameter payload")
        return cls(config, params, header.get("meta", {}))

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    write_atomic(path, ckpt.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())
