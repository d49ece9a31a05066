"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"VMND" | version u32 | header_len u64 | header (UTF-8 JSON)
    then, for every blob listed in header["blobs"]: byte_len u64 | float32 LE payload

The header carries the network config, epoch, best validation loss,
training config and optimizer scalars; blobs are parameters, buffers and
Adam moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voxdemog.errors import CheckpointError, CheckpointVersionError, DimensionError
from voxdemog.nets import NetConfig, Network, build

MAGIC = b"VMND"
VERSION = 1


@dataclass
class Checkpoint:
    net_config: dict
    state: dict[str, np.ndarray]
    epoch: int = 0
    best_val_loss: float = float("inf")
    train_config: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    @property
    def config(self) -> NetConfig:
        return NetConfig.from_dict(self.net_config)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blobs = []
    for prefix, group in (("state", ckpt.state), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name, arr in group.items():
            blobs.append((f"{prefix}/{name}", np.ascontiguousarray(arr, dtype="<f4")))
    header = {
        "net_config": ckpt.net_config,
        "epoch": int(ckpt.epoch),
        "best_val_loss": float(ckpt.best_val_loss),
        "train_config": ckpt.train_config,
        "optimizer": ckpt.optimizer,
        "blobs": [{"name": n, "shape": list(a.shape)} for n, a in blobs],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(head)), head]
    for _, arr in blobs:
        raw = arr.tobytes()
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    Path(path).write_bytes(b"".join(parts))


def _read(buf: memoryview, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return bytes(buf[pos : pos + n]), pos + n


def load_checkpoint(path, net: Network | None = None) -> Checkpoint:
    """Parse a checkpoint; with ``net`` also load its state into that network.

    Nothing is written into ``net`` unless the whole file parses and every
    name and shape matches.
    """
    try:
        buf = memoryview(Path(path).read_bytes())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    magic, pos = _read(buf, 0, 4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    raw, pos = _read(buf, pos, 4, "version")
    (version,) = struct.unpack("<I", raw)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    raw, pos = _read(buf, pos, 8, "header length")
    (hlen,) = struct.unpack("<Q", raw)
    raw, pos = _read(buf, pos, hlen, "header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    groups: dict[str, dict[str, np.ndarray]] = {"state": {}, "adam_m": {}, "adam_v": {}}
    for blob in header["blobs"]:
        raw, pos = _read(buf, pos, 8, blob["name"])
        (n,) = struct.unpack("<Q", raw)
        shape = tuple(blob["shape"])
        if n != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: blob {blob['name']} length {n} does not match shape {shape}")
        raw, pos = _read(buf, pos, n, blob["name"])
        prefix, name = blob["name"].split("/", 1)
        groups[prefix][name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    ckpt = Checkpoint(
        net_config=header["net_config"],
        state=groups["state"],
        epoch=header["epoch"],
        best_val_loss=header["best_val_loss"],
        train_config=header["train_config"],
        optimizer=header["optimizer"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        version=version,
    )
    if net is not None:
        load_into(net, ckpt)
    return ckpt


def load_into(net: Network, ckpt: Checkpoint) -> None:
    if ckpt.net_config.get("arch") != net.config.arch:
        raise CheckpointError(f"checkpoint is for {ckpt.net_config.get('arch')!r}, network is {net.config.arch!r}")
    try:
        net.load_state(ckpt.state)
    except DimensionError as exc:
        raise CheckpointError(f"checkpoint does not fit network: {exc}") from exc


def restore_network(ckpt: Checkpoint) -> Network:
    net = build(ckpt.config)
    load_into(net, ckpt)
    return net
