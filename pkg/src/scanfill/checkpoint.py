"""Model registry and the ``SFCK`` checkpoint container.

Layout (little-endian): magic ``SFCK``, u32 format version, u8 model kind,
u64 config fingerprint, u32 + UTF-8 JSON header (architecture config and
metadata), u32 tensor count, then per tensor a u32 + UTF-8 name followed by
its ``SFT1`` encoding.  Names are written in sorted order so equal states
produce equal bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import Module
from .autodiff.serialize import FormatError, read_tensor, write_tensor
from .baselines.partialconv import PartialConvConfig, PartialConvNet
from .baselines.unet import UNet, UNetConfig
from .models.convnp import ConvCNP, ConvCnpConfig, ConvLNP, ConvLnpConfig

MAGIC = b"SFCK"
FORMAT_VERSION = 1

MODEL_KINDS = {"convcnp": 0, "convlnp": 1, "unet": 2, "partialconv": 3}
_KIND_NAMES = {v: k for k, v in MODEL_KINDS.items()}
_REGISTRY = {
    "convcnp": (ConvCNP, ConvCnpConfig),
    "convlnp": (ConvLNP, ConvLnpConfig),
    "unet": (UNet, UNetConfig),
    "partialconv": (PartialConvNet, PartialConvConfig),
}


class CheckpointMismatch(ValueError):
    """Architecture in a checkpoint does not match what the caller expects."""


def make_config(kind: str, overrides: dict | None = None):
    if kind not in _REGISTRY:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(_REGISTRY)}")
    cls = _REGISTRY[kind][1]
    overrides = dict(overrides or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValueError(f"unknown {kind} architecture field(s): {unknown}")
    return cls(**overrides)


def build_model(kind: str, config=None, seed: int = 0) -> Module:
    model_cls, cfg_cls = _REGISTRY[kind] if kind in _REGISTRY else (None, None)
    if model_cls is None:
        raise ValueError(f"unknown model kind {kind!r}")
    if config is None or isinstance(config, dict):
        config = make_config(kind, config)
    return model_cls(config, seed=seed)


def fingerprint(kind: str, config) -> int:
    cfg = asdict(config) if not isinstance(config, dict) else config
    blob = json.dumps({"kind": kind, "config": cfg}, sort_keys=True).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class Checkpoint:
    kind: str
    config: dict
    state: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> int:
        return fingerprint(self.kind, self.config)

    @classmethod
    def from_model(cls, model: Module, meta: dict | None = None) -> "Checkpoint":
        return cls(model.kind, asdict(model.config), model.state_dict(), dict(meta or {}))

    def build(self) -> Module:
        model = build_model(self.kind, dict(self.config))
        model.load_state_dict(self.state)
        return model

    def check_compatible(self, kind: str, config) -> None:
        expected = fingerprint(kind, config)
        if kind != self.kind or expected != self.fingerprint:
            mine = self.config
            theirs = asdict(config) if not isinstance(config, dict) else config
            diff = {k: (mine.get(k), theirs.get(k)) for k in sorted(set(mine) | set(theirs))
                    if mine.get(k) != theirs.get(k)}
            raise CheckpointMismatch(
                f"checkpoint is {self.kind} {self.fingerprint:016x}, expected {kind} {expected:016x}; "
                f"differing fields (checkpoint, expected): {diff}")

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<IBQ", FORMAT_VERSION, MODEL_KINDS[self.kind], self.fingerprint))
        header = json.dumps({"config": self.config, "meta": self.meta}, sort_keys=True).encode()
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        buf.write(struct.pack("<I", len(self.state)))
        for name in sorted(self.state):
            raw = name.encode()
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            write_tensor(buf, self.state[name])
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        f = io.BytesIO(data)
        if f.read(4) != MAGIC:
            raise FormatError("not a checkpoint (bad magic)")
        version, code, fp = struct.unpack("<IBQ", f.read(13))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        if code not in _KIND_NAMES:
            raise FormatError(f"unknown model kind code {code}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        (count,) = struct.unpack("<I", f.read(4))
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            state[name] = read_tensor(f)
        ck = cls(_KIND_NAMES[code], header["config"], state, header.get("meta", {}))
        if ck.fingerprint != fp:
            raise FormatError("config fingerprint does not match the stored architecture")
        return ck

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
