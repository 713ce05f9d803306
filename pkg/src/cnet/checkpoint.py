"""Binary checkpoint format.

Layout: magic ``CNET``, u32 format version, a length-prefixed canonical
key-sorted ``key=value`` text block (model config, optimizer hyperparameters,
metadata), u32 tensor count, per-tensor records (name, dtype tag, shape,
little-endian float32 payload), and a trailing CRC-32 of all preceding bytes.
Writes are atomic (temp file + rename).  Load rebuilds the model from the
stored config, so a round-trip restores eval-mode behavior bit-exactly.
"""

import os
import struct
import zlib
from fractions import Fraction

import numpy as np

from .errors import ConfigMismatch, CorruptChecksum, FormatVersionMismatch
from .model import CNetConfig, CNetModel, build_cnet
from .optim import AdamState

MAGIC = b"CNET"
FORMAT_VERSION = 1
_DTYPE_F32 = 0


def _encode_config(config: CNetConfig, state, class_names) -> bytes:
    kv = {
        "model.input_size": f"{config.input_size[0]}x{config.input_size[1]}",
        "model.input_channels": str(config.input_channels),
        "model.outer_count": str(config.outer_count),
        "model.outer_convs_per_block": ",".join(map(str, config.outer_convs_per_block)),
        "model.outer_filters": ",".join(map(str, config.outer_filters)),
        "model.middle_count": str(config.middle_count),
        "model.middle_convs_per_block": str(config.middle_convs_per_block),
        "model.middle_filters": str(config.middle_filters),
        "model.middle_blocks": str(config.middle_blocks),
        "model.inner_convs": str(config.inner_convs),
        "model.inner_filters": str(config.inner_filters),
        "model.fc_units": str(config.fc_units),
        "model.output_nodes": str(config.output_nodes),
        "model.dropout_middle": repr(config.dropout_middle),
        "model.dropout_fc": repr(config.dropout_fc),
        "model.width_scale": str(config.width_scale),
    }
    if state is not None:
        kv["adam.learning_rate"] = repr(state.learning_rate)
        kv["adam.beta1"] = repr(state.beta1)
        kv["adam.beta2"] = repr(state.beta2)
        kv["adam.eps_hat"] = repr(state.eps_hat)
        kv["adam.step_count"] = str(state.step_count)
    if class_names is not None:
        kv["meta.class_names"] = ",".join(class_names)
    lines = [f"{k}={kv[k]}" for k in sorted(kv)]
    return "\n".join(lines).encode("utf-8")


def _decode_config(blob: bytes):
    kv = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            kv[key] = value

    def ints(key):
        return tuple(int(v) for v in kv[key].split(","))

    h, _, w = kv["model.input_size"].partition("x")
    config = CNetConfig(
        input_size=(int(h), int(w)),
        input_channels=int(kv["model.input_channels"]),
        outer_count=int(kv["model.outer_count"]),
        outer_convs_per_block=ints("model.outer_convs_per_block"),
        outer_filters=ints("model.outer_filters"),
        middle_count=int(kv["model.middle_count"]),
        middle_convs_per_block=int(kv["model.middle_convs_per_block"]),
        middle_filters=int(kv["model.middle_filters"]),
        middle_blocks=int(kv["model.middle_blocks"]),
        inner_convs=int(kv["model.inner_convs"]),
        inner_filters=int(kv["model.inner_filters"]),
        fc_units=int(kv["model.fc_units"]),
        output_nodes=int(kv["model.output_nodes"]),
        dropout_middle=float(kv["model.dropout_middle"]),
        dropout_fc=float(kv["model.dropout_fc"]),
        width_scale=Fraction(kv["model.width_scale"]),
    )
    state = None
    if "adam.step_count" in kv:
        state = AdamState(
            learning_rate=float(kv["adam.learning_rate"]),
            beta1=float(kv["adam.beta1"]),
            beta2=float(kv["adam.beta2"]),
            eps_hat=float(kv["adam.eps_hat"]),
            step_count=int(kv["adam.step_count"]),
        )
    names = kv.get("meta.class_names")
    meta = {"class_names": names.split(",") if names else None}
    return config, state, meta


def _tensor_record(name: str, array: np.ndarray) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f4")
    nb = name.encode("utf-8")
    parts = [struct.pack("<I", len(nb)), nb,
             struct.pack("<BB", _DTYPE_F32, data.ndim),
             struct.pack(f"<{data.ndim}I", *data.shape),
             data.tobytes()]
    return b"".join(parts)


def save_checkpoint(model: CNetModel, optimizer_state, path, class_names=None) -> None:
    """Write model parameters (and Adam moments, when given) atomically."""
    records = [(name, p.data) for name, p in model.params.items()]
    if optimizer_state is not None:
        for name in model.params:
            records.append((f"adam.m.{name}", optimizer_state.first_moment[name]))
            records.append((f"adam.v.{name}", optimizer_state.second_moment[name]))

    config_blob = _encode_config(model.config, optimizer_state, class_names)
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION),
           struct.pack("<I", len(config_blob)), config_blob,
           struct.pack("<I", len(records))]
    out.extend(_tensor_record(name, arr) for name, arr in records)
    body = b"".join(out)
    body += struct.pack("<I", zlib.crc32(body))

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptChecksum("checkpoint ends mid-record")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expect_config: CNetConfig = None):
    """Read a checkpoint; returns (model, optimizer_state, meta).

    ``expect_config``, when given, must equal the stored config exactly
    (ConfigMismatch otherwise).  The checksum covers the whole file, so any
    truncation or bit damage raises CorruptChecksum before parsing output.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise CorruptChecksum("file too short to be a checkpoint")
    stored = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored:
        raise CorruptChecksum("CRC-32 mismatch")

    rd = _Reader(data[:-4])
    if rd.take(4) != MAGIC:
        raise CorruptChecksum("bad magic bytes")
    version = rd.u32()
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")

    config, state, meta = _decode_config(rd.take(rd.u32()))
    if expect_config is not None and expect_config != config:
        raise ConfigMismatch("stored config differs from the requested one")

    arrays = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        tag, ndim = struct.unpack("<BB", rd.take(2))
        if tag != _DTYPE_F32:
            raise CorruptChecksum(f"unknown dtype tag {tag}")
        shape = struct.unpack(f"<{ndim}I", rd.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        payload = rd.take(4 * count)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()

    model = build_cnet(config, seed=0)
    for name, p in model.params.items():
        if name not in arrays:
            raise ConfigMismatch(f"checkpoint lacks parameter {name!r}")
        if arrays[name].shape != p.data.shape:
            raise ConfigMismatch(
                f"parameter {name!r}: stored shape {arrays[name].shape}, "
                f"graph expects {p.data.shape}"
            )
        p.data = arrays[name]

    if state is not None:
        for name, p in model.params.items():
            m = arrays.get(f"adam.m.{name}")
            v = arrays.get(f"adam.v.{name}")
            if m is None or v is None:
                raise ConfigMismatch(f"checkpoint lacks optimizer moments for {name!r}")
            state.first_moment[name] = m
            state.second_moment[name] = v

    return model, state, meta
