"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    offset  size  field
    0       8     magic ``b"PROJSRCK"``
    8       4     format version (uint32, currently 1)
    12      4     flags (uint32; bit 0 = optimizer momentum blobs present)
    16      8     header length H (uint64)
    24      H     UTF-8 JSON header, canonical form (sorted keys):
                    spec        network spec dict
                    metadata    flat str->str map
                    param_dtype always "<f4"
                    optimizer   hyperparameters or null
    24+H    ...   parameter blobs: for every conv layer in canonical
                  order, weights then biases, C-order little-endian
                  float32
    ...           optional momentum blobs, same order and layout

Canonical layer order is extraction, then per unit skip/f1/f2, then
reconstruction (see Network.conv_list). The layout is fully determined by
the spec, so a round-trip is lossless and bitwise stable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import ConvParams, OptimizerState
from .errors import ConfigError
from .model import Network, NetworkSpec, UnitParams, spec_from_dict, spec_to_dict

MAGIC = b"PROJSRCK"
FORMAT_VERSION = 1
_FLAG_OPTIMIZER = 1
PARAM_DTYPE = np.dtype("<f4")


def param_shapes(spec: NetworkSpec) -> list[tuple[int, int]]:
    """(in_ch, out_ch) of every conv layer in canonical order."""
    shapes = []
    prev = spec.in_channels
    for width in spec.extraction:
        shapes.append((prev, width))
        prev = width
    for us in spec.unit_specs(conv_at_transitions=True):
        if us.skip_kind == "conv":
            shapes.append((us.channels_in, us.channels_out))
        shapes.append((us.channels_in, us.channels_out))
        shapes.append((us.channels_out, us.channels_out))
        prev = us.channels_out
    for width in spec.reconstruction:
        shapes.append((prev, width))
        prev = width
    return shapes


def network_from_convs(spec: NetworkSpec, convs: list[ConvParams]) -> Network:
    """Assemble a Network from conv layers given in canonical order."""
    it = iter(convs)
    ext = [next(it) for _ in spec.extraction]
    units = []
    for us in spec.unit_specs(conv_at_transitions=True):
        skip = next(it) if us.skip_kind == "conv" else None
        f1 = next(it)
        f2 = next(it)
        units.append(UnitParams(f1, f2, skip, us.activation_order))
    recon = [next(it) for _ in spec.reconstruction]
    leftovers = sum(1 for _ in it)
    if leftovers:
        raise ConfigError(f"{leftovers} unexpected extra conv layers for spec")
    return Network(spec, ext, units, recon)


@dataclass
class Checkpoint:
    """Spec, parameters, optional optimizer momentum, and a metadata map."""

    spec: NetworkSpec
    convs: list[ConvParams]
    optimizer: OptimizerState | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_network(
        cls,
        net: Network,
        optimizer: OptimizerState | None = None,
        metadata: dict[str, str] | None = None,
    ) -> "Checkpoint":
        return cls(
            net.spec,
            [p.copy() for p in net.conv_list()],
            optimizer,
            dict(metadata or {}),
        )

    def network(self) -> Network:
        """Instantiate a Network backed by copies of the stored parameters."""
        return network_from_convs(self.spec, [p.copy() for p in self.convs])

    def with_metadata(self, **extra: str) -> "Checkpoint":
        md = dict(self.metadata)
        md.update({k: str(v) for k, v in extra.items()})
        return Checkpoint(self.spec, [p.copy() for p in self.convs],
                          self.optimizer, md)

    def to_bytes(self) -> bytes:
        header = {
            "spec": spec_to_dict(self.spec),
            "metadata": {str(k): str(v) for k, v in self.metadata.items()},
            "param_dtype": "<f4",
            "optimizer": None
            if self.optimizer is None
            else {
                "learning_rate": self.optimizer.learning_rate,
                "momentum": self.optimizer.momentum,
                "weight_decay": self.optimizer.weight_decay,
                "clip_theta": self.optimizer.clip_theta,
            },
        }
        hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        flags = 0 if self.optimizer is None else _FLAG_OPTIMIZER
        chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, flags),
                  struct.pack("<Q", len(hjson)), hjson]
        for p in self.convs:
            chunks.append(np.ascontiguousarray(p.weights, PARAM_DTYPE).tobytes())
            chunks.append(np.ascontiguousarray(p.biases, PARAM_DTYPE).tobytes())
        if self.optimizer is not None:
            for v in self.optimizer.velocities:
                chunks.append(np.ascontiguousarray(v, PARAM_DTYPE).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != MAGIC:
            raise ConfigError("not a checkpoint file (bad magic)")
        version, flags = struct.unpack_from("<II", blob, 8)
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format version {version}")
        (hlen,) = struct.unpack_from("<Q", blob, 16)
        header = json.loads(blob[24 : 24 + hlen].decode())
        if header["param_dtype"] != "<f4":
            raise ConfigError(f"unsupported param dtype {header['param_dtype']}")
        spec = spec_from_dict(header["spec"])
        off = 24 + hlen

        def read_array(shape):
            nonlocal off
            n = int(np.prod(shape)) * PARAM_DTYPE.itemsize
            arr = np.frombuffer(blob, PARAM_DTYPE, count=int(np.prod(shape)), offset=off)
            off += n
            return arr.reshape(shape).copy()

        convs = []
        for c_in, c_out in param_shapes(spec):
            w = read_array((c_out, c_in, 3, 3))
            b = read_array((c_out,))
            convs.append(ConvParams(w, b))
        optimizer = None
        if flags & _FLAG_OPTIMIZER:
            h = header["optimizer"]
            optimizer = OptimizerState(
                learning_rate=h["learning_rate"],
                momentum=h["momentum"],
                weight_decay=h["weight_decay"],
                clip_theta=h["clip_theta"],
            )
            vels = []
            for c_in, c_out in param_shapes(spec):
                vels.append(read_array((c_out, c_in, 3, 3)))
                vels.append(read_array((c_out,)))
            optimizer.velocities = vels
        if off != len(blob):
            raise ConfigError(
                f"checkpoint has {len(blob) - off} trailing bytes; corrupt file?"
            )
        return cls(spec, convs, optimizer, dict(header["metadata"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
