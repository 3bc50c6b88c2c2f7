"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic      8 bytes  b"B3DCKPT1"
    meta_len   u32      length of the JSON metadata block
    meta       bytes    JSON: model hyperparameters + noise-schedule config
    n_arrays   u32      number of parameter arrays
    per array:
        name_len u32, name utf-8
        ndim     u32, dims ndim × u64
    data       flat float64 arrays, in table order

Writes are atomic (temp file + rename), so an interrupted save never leaves
a partial checkpoint behind. Loads validate the magic, the declared shapes,
and the payload length; anything inconsistent raises an integrity error.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .denoiser import DenoiserParams
from .errors import IntegrityError
from .schedules import NoiseSchedule, build_schedule

MAGIC = b"B3DCKPT1"


def _array_names(params: DenoiserParams) -> list[str]:
    names = []
    for i in range(len(params.weights)):
        names.extend([f"layer{i}.weight", f"layer{i}.bias"])
    names.extend(["gate.u", "gate.b1", "gate.v", "gate.b2", "cond_table"])
    return names


def save_checkpoint(
    path,
    params: DenoiserParams,
    schedule: NoiseSchedule,
    extra_meta: dict | None = None,
) -> None:
    meta = {
        "grid_hw": params.grid_hw,
        "temb_dim": params.temb_dim,
        "n_hue_bins": params.n_hue_bins,
        "schedule": {
            "kind": schedule.kind,
            "beta_start": schedule.beta_start,
            "beta_end": schedule.beta_end,
            "n_steps": schedule.n_steps,
        },
    }
    if extra_meta:
        meta["extra"] = extra_meta
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    arrays = params.arrays()
    names = _array_names(params)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(arrays))
    for name, arr in zip(names, arrays):
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    for arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(bytes(blob))
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise IntegrityError(f"checkpoint {self.path} is truncated")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[DenoiserParams, NoiseSchedule, dict]:
    """Returns (params, schedule, extra_meta)."""
    path = os.fspath(path)
    with open(path, "rb") as handle:
        reader = _Reader(handle.read(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise IntegrityError(f"checkpoint {path} has wrong magic bytes")
    try:
        meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"checkpoint {path} has corrupt metadata: {exc}") from None

    n_arrays = reader.u32()
    # 2 per dense layer (>= 2 layers), 4 gate arrays, 1 condition table.
    if n_arrays < 9 or n_arrays % 2 != 1:
        raise IntegrityError(f"checkpoint {path} declares {n_arrays} arrays; expected an odd count >= 9")
    table = []
    for _ in range(n_arrays):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = struct.unpack(f"<{ndim}Q", reader.take(8 * ndim))
        table.append((name, shape))
    arrays = []
    for name, shape in table:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        arrays.append(arr)
    if reader.offset != len(reader.data):
        raise IntegrityError(f"checkpoint {path} has {len(reader.data) - reader.offset} trailing bytes")

    n_layers = (n_arrays - 5) // 2
    params = DenoiserParams(
        weights=[arrays[2 * i] for i in range(n_layers)],
        biases=[arrays[2 * i + 1] for i in range(n_layers)],
        gate_u=arrays[-5],
        gate_b1=arrays[-4],
        gate_v=arrays[-3],
        gate_b2=arrays[-2],
        cond_table=arrays[-1],
        grid_hw=int(meta["grid_hw"]),
        temb_dim=int(meta["temb_dim"]),
        n_hue_bins=int(meta["n_hue_bins"]),
    )
    if params.weights[0].shape[0] != params.temb_dim + params.cond_dim:
        raise IntegrityError(f"checkpoint {path}: layer shapes disagree with declared geometry")
    if params.weights[-1].shape[1] != params.x_dim:
        raise IntegrityError(f"checkpoint {path}: output head size disagrees with grid size")
    sched_meta = meta["schedule"]
    schedule = build_schedule(
        kind=sched_meta["kind"],
        beta_start=float(sched_meta["beta_start"]),
        beta_end=float(sched_meta["beta_end"]),
        n_steps=int(sched_meta["n_steps"]),
    )
    return params, schedule, meta.get("extra", {})
