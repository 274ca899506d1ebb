"""Bit-exact binary checkpoints.

Layout (all integers little-endian):

    magic    4 bytes  b"LCN1"
    version  u32
    arch id  u16 length + UTF-8
    variant  u16 length + UTF-8 (JSON build descriptor: depth variant,
             width multiplier, input channels, class labels)
    count    u32 number of parameter entries
    entry*   u16 name length + UTF-8 ("layer/slot"), u8 ndim,
             u32 per dim, raw float32 data
    crc      u32 CRC-32 of every preceding byte

Round-tripping a model through save/load reproduces its predictions
bitwise; a corrupted byte fails the CRC, a changed version fails loudly.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .architectures import build_architecture
from .errors import CheckpointError
from .graph import NetworkGraph

MAGIC = b"LCN1"
VERSION = 1


@dataclass
class Model:
    """A built graph plus its parameter arrays and class label names."""

    graph: NetworkGraph
    params: dict
    labels: list
    width: float = 1.0

    @property
    def classes(self) -> int:
        return self.graph.classes

    def descriptor(self) -> dict:
        return {
            "depth_variant": self.graph.variant,
            "width": self.width,
            "in_channels": self.graph.input_shape[0],
            "classes": self.graph.classes,
            "labels": list(self.labels),
        }


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"string too long for checkpoint field ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")


def save_checkpoint(model: Model, path) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(_pack_str(model.graph.arch_id))
    chunks.append(_pack_str(json.dumps(model.descriptor(), sort_keys=True)))
    entries = []
    for layer_name, slots in model.params.items():
        for slot_name, arr in slots.items():
            entries.append((f"{layer_name}/{slot_name}", np.asarray(arr)))
    chunks.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4", copy=False).tobytes())
    body = b"".join(chunks)
    body += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(body)


def load_checkpoint(path) -> Model:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    r = _Reader(blob[:-4])
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    arch_id = r.string()
    try:
        desc = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable build descriptor") from exc

    graph = build_architecture(
        arch_id,
        classes=desc["classes"],
        in_channels=desc["in_channels"],
        width=desc["width"],
        depth_variant=desc.get("depth_variant") or None,
    )
    from .rng import RngHandle

    reference = graph.init_params(RngHandle(0))
    params: dict = {name: {} for name in reference}
    count = r.u32()
    for _ in range(count):
        name = r.string()
        ndim = r.u8()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        layer, _, slot = name.rpartition("/")
        if layer not in params:
            raise CheckpointError(f"{path}: parameter for unknown layer '{layer}'")
        params[layer][slot] = arr
    for layer, slots in reference.items():
        got = params.get(layer, {})
        for slot, arr in slots.items():
            if slot not in got:
                raise CheckpointError(f"{path}: missing parameter '{layer}/{slot}'")
            if got[slot].shape != arr.shape:
                raise CheckpointError(
                    f"{path}: parameter '{layer}/{slot}' has shape {got[slot].shape}, graph expects {arr.shape}"
                )
    return Model(graph=graph, params={k: v for k, v in params.items() if v}, labels=list(desc["labels"]), width=desc["width"])
