"""Binary checkpoint format.

Layout (little-endian)::

    b"GSBH"  u32 version  u64 record_count
    record*: u32 name_len, utf-8 name, u32 rank, u64 dim * rank, f64 payload

Model hyperparameters live in ``config.*`` records, weights in ``param.*``,
AdamW moments in ``optim.m.*`` / ``optim.v.*`` and scalars in ``optim.*``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import fields

import numpy as np

from gsbh.errors import FormatError
from gsbh.model import ModelConfig, PolicyParams
from gsbh.optim import OptimizerState
from gsbh.tensor import Tensor

MAGIC = b"GSBH"
VERSION = 1
_OPTIM_SCALARS = ("step", "base_lr", "weight_decay", "warmup_steps", "total_steps")


def _records(params: PolicyParams, state: OptimizerState | None):
    for f in fields(ModelConfig):
        yield f"config.{f.name}", np.asarray(getattr(params.config, f.name), dtype=np.float64)
    for name, t in params.tensors.items():
        yield f"param.{name}", t.data
    if state is None:
        return
    for key in _OPTIM_SCALARS:
        yield f"optim.{key}", np.asarray(getattr(state, key), dtype=np.float64)
    for name in state.first_moment:
        yield f"optim.m.{name}", state.first_moment[name]
        yield f"optim.v.{name}", state.second_moment[name]


def checkpoint_bytes(params: PolicyParams, state: OptimizerState | None = None) -> bytes:
    records = list(_records(params, state))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(records)))
    for name, arr in records:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(params: PolicyParams, state: OptimizerState | None, path) -> None:
    data = checkpoint_bytes(params, state)
    with open(path, "wb") as f:
        f.write(data)


def parse_checkpoint(data: bytes) -> tuple[PolicyParams, OptimizerState | None]:
    pos = 0

    def take(n, section):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"checkpoint truncated in {section}", pos)
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4, "header") != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, count = struct.unpack("<IQ", take(12, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})", 4)
    records: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"record {i} name length"))
        name = take(nlen, f"record {i} name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"record '{name}' rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"record '{name}' dims"))
        size = int(np.prod(dims)) if rank else 1
        payload = take(8 * size, f"record '{name}' payload")
        records[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(data):
        raise FormatError("trailing bytes after last record", pos)

    cfg = {}
    for f in fields(ModelConfig):
        key = f"config.{f.name}"
        if key not in records:
            raise FormatError(f"checkpoint missing section {key}")
        v = records[key]
        if f.name == "channels":
            cfg[f.name] = tuple(int(c) for c in v.reshape(-1))
        elif f.name.startswith("use_"):
            cfg[f.name] = bool(v)
        else:
            cfg[f.name] = int(v)
    params = PolicyParams(ModelConfig(**cfg), {
        k[len("param."):]: Tensor(v, True, k[len("param."):]) for k, v in records.items() if k.startswith("param.")})
    if "optim.step" not in records:
        return params, None
    scalars = {}
    for key in _OPTIM_SCALARS:
        if f"optim.{key}" not in records:
            raise FormatError(f"checkpoint missing section optim.{key}")
        scalars[key] = float(records[f"optim.{key}"])
    state = OptimizerState(base_lr=scalars["base_lr"], weight_decay=scalars["weight_decay"],
                           warmup_steps=int(scalars["warmup_steps"]), total_steps=int(scalars["total_steps"]),
                           step=int(scalars["step"]))
    for k, v in records.items():
        if k.startswith("optim.m."):
            state.first_moment[k[len("optim.m."):]] = v
        elif k.startswith("optim.v."):
            state.second_moment[k[len("optim.v."):]] = v
    return params, state


def load_checkpoint(path) -> tuple[PolicyParams, OptimizerState | None]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
