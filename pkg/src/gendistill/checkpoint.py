"""Versioned binary container for generator/discriminator checkpoints.

Layout (all integers little-endian):

    bytes 0..3    magic b"GDCP"
    bytes 4..7    u32 format version (currently 1)
    bytes 8..15   u64 header length H
    bytes 16..    header JSON (utf-8, H bytes)
    then          concatenated little-endian array payloads

The header records the stage tag, generator spec, discriminator shape info,
metadata, optional rng stream states (hex), and one entry per array with
name/dtype/shape/offset. Arrays are stored as raw little-endian bytes, so a
save/load round trip restores bit-identical parameters on any platform.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .arch import Discriminator, GeneratorSpec, build_discriminator, build_generator
from .exceptions import CheckpointError

MAGIC = b"GDCP"
FORMAT_VERSION = 1

STAGE_PRETRAINED = "pretrained"
STAGE_DISTILLED = "distilled"


def _state_to_arrays(state: dict, prefix: str) -> dict:
    arrays = {}
    for key, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        arrays[f"{prefix}.{key}"] = np.ascontiguousarray(arr)
    return arrays


def _arrays_to_state(arrays: dict, prefix: str) -> dict:
    state = {}
    skip = len(prefix) + 1
    for name, arr in arrays.items():
        if name.startswith(prefix + "."):
            state[name[skip:]] = torch.from_numpy(arr.copy())
    return state


@dataclass
class GeneratorCheckpoint:
    """Serialized generator (and discriminator) parameters plus metadata."""

    stage: str
    generator_spec: GeneratorSpec
    gen_state: dict
    disc_state: dict = None
    disc_channels: int = None
    metadata: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)

    def build_generator(self):
        gen = build_generator(self.generator_spec, seed=0)
        gen.load_state_dict(self.gen_state)
        return gen

    def build_discriminator(self) -> Discriminator:
        if self.disc_state is None:
            raise CheckpointError("checkpoint holds no discriminator parameters")
        disc = build_discriminator(
            self.generator_spec.num_classes, self.disc_channels, seed=0
        )
        disc.load_state_dict(self.disc_state)
        return disc

    def to_bytes(self) -> bytes:
        arrays = _state_to_arrays(self.gen_state, "gen")
        if self.disc_state is not None:
            arrays.update(_state_to_arrays(self.disc_state, "disc"))
        entries = []
        payload = bytearray()
        for name in sorted(arrays):
            arr = arrays[name]
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            entries.append(
                {
                    "name": name,
                    "dtype": le.dtype.str,
                    "shape": list(arr.shape),
                    "offset": len(payload),
                    "nbytes": len(raw),
                }
            )
            payload.extend(raw)
        header = {
            "stage": self.stage,
            "generator_spec": self.generator_spec.to_dict(),
            "disc_channels": self.disc_channels,
            "metadata": self.metadata,
            "rng_state": self.rng_state,
            "arrays": entries,
        }
        header_raw = json.dumps(header, sort_keys=True).encode("utf-8")
        return (
            MAGIC
            + struct.pack("<I", FORMAT_VERSION)
            + struct.pack("<Q", len(header_raw))
            + header_raw
            + bytes(payload)
        )

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "GeneratorCheckpoint":
        if len(raw) < 16 or raw[:4] != MAGIC:
            raise CheckpointError("not a generator checkpoint (bad magic)")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", raw[8:16])
        if len(raw) < 16 + header_len:
            raise CheckpointError("truncated checkpoint header")
        try:
            header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
        except ValueError as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        payload = raw[16 + header_len :]
        arrays = {}
        for entry in header["arrays"]:
            start, nbytes = entry["offset"], entry["nbytes"]
            if start + nbytes > len(payload):
                raise CheckpointError(f"truncated payload for array {entry['name']}")
            count = int(np.prod(entry["shape"]))  # empty shape -> scalar, count 1
            arr = np.frombuffer(payload, dtype=np.dtype(entry["dtype"]), count=count, offset=start)
            arr = arr.reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        gen_state = _arrays_to_state(arrays, "gen")
        disc_state = _arrays_to_state(arrays, "disc") or None
        return cls(
            stage=header["stage"],
            generator_spec=GeneratorSpec.from_dict(header["generator_spec"]),
            gen_state=gen_state,
            disc_state=disc_state,
            disc_channels=header.get("disc_channels"),
            metadata=header.get("metadata", {}),
            rng_state=header.get("rng_state", {}),
        )

    @classmethod
    def load(cls, path: str) -> "GeneratorCheckpoint":
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(raw)

    def digest(self) -> str:
        """Stable id over stage, spec, and parameter bytes (metadata excluded)."""
        h = hashlib.sha256()
        h.update(self.stage.encode())
        h.update(json.dumps(self.generator_spec.to_dict(), sort_keys=True).encode())
        arrays = _state_to_arrays(self.gen_state, "gen")
        if self.disc_state is not None:
            arrays.update(_state_to_arrays(self.disc_state, "disc"))
        for name in sorted(arrays):
            arr = arrays[name]
            h.update(name.encode())
            h.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
        return h.hexdigest()[:16]


def checkpoint_from_models(gen, disc, stage: str, metadata: dict = None, rng_state: dict = None) -> GeneratorCheckpoint:
    return GeneratorCheckpoint(
        stage=stage,
        generator_spec=gen.spec,
        gen_state={k: v.clone() for k, v in gen.state_dict().items()},
        disc_state=None if disc is None else {k: v.clone() for k, v in disc.state_dict().items()},
        disc_channels=None if disc is None else disc.input_channels,
        metadata=metadata or {},
        rng_state=rng_state or {},
    )
