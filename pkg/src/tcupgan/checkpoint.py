"""Versioned checkpoint container.

Binary layout: a fixed magic line, an 8-byte little-endian header length,
a JSON header (architecture hyperparameters, free-form metadata, and a
tensor index), then the raw tensor bytes.  Tensors round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import (
    ConvLSTMUNet,
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
)

MAGIC = b"TCUPGAN-CKPT-v1\n"


def _tensor_map(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.{name}": value.detach().cpu().numpy()
        for name, value in module.state_dict().items()
    }


@dataclass
class Checkpoint:
    """In-memory view of a checkpoint file."""

    tensors: dict[str, np.ndarray]
    generator_config: GeneratorConfig | None = None
    discriminator_config: DiscriminatorConfig | None = None
    meta: dict = field(default_factory=dict)

    def _load_module(self, module: torch.nn.Module, prefix: str) -> None:
        state = {}
        plen = len(prefix) + 1
        for name, arr in self.tensors.items():
            if name.startswith(prefix + "."):
                state[name[plen:]] = torch.from_numpy(arr.copy())
        module.load_state_dict(state)

    def build_generator(self) -> ConvLSTMUNet:
        if self.generator_config is None:
            raise ValueError("checkpoint holds no generator")
        gen = ConvLSTMUNet(self.generator_config)
        self._load_module(gen, "generator")
        return gen

    def build_discriminator(self) -> PatchDiscriminator:
        if self.discriminator_config is None:
            raise ValueError("checkpoint holds no discriminator")
        disc = PatchDiscriminator(self.discriminator_config)
        self._load_module(disc, "discriminator")
        return disc


def save_checkpoint(path, generator: ConvLSTMUNet | None = None,
                    discriminator: PatchDiscriminator | None = None,
                    meta: dict | None = None,
                    extra_tensors: dict[str, np.ndarray] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    tensors: dict[str, np.ndarray] = {}
    arch: dict = {}
    if generator is not None:
        tensors.update(_tensor_map(generator, "generator"))
        arch["generator"] = generator.config.to_dict()
    if discriminator is not None:
        tensors.update(_tensor_map(discriminator, "discriminator"))
        arch["discriminator"] = discriminator.config.to_dict()
    for name, arr in (extra_tensors or {}).items():
        tensors[name] = np.ascontiguousarray(arr)

    index = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        tensors[name] = arr
        index.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        offset += arr.nbytes

    header = json.dumps({
        "format": MAGIC.decode().strip(),
        "arch": arch,
        "meta": meta or {},
        "tensors": index,
    }).encode()

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for arr in tensors.values():
            fh.write(arr.tobytes())
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a {MAGIC.decode().strip()} checkpoint")
    header_len = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 8], "little")
    header_start = len(MAGIC) + 8
    header = json.loads(raw[header_start:header_start + header_len])
    blob_start = header_start + header_len

    tensors = {}
    for entry in header["tensors"]:
        start = blob_start + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()

    arch = header.get("arch", {})
    return Checkpoint(
        tensors=tensors,
        generator_config=(
            GeneratorConfig.from_dict(arch["generator"]) if "generator" in arch else None
        ),
        discriminator_config=(
            DiscriminatorConfig.from_dict(arch["discriminator"]) if "discriminator" in arch else None
        ),
        meta=header.get("meta", {}),
    )
