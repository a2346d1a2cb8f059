"""S2FW checkpoint container: architecture, block manifest, float32 parameters, Adam state."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .. import ValidationError
from .optim import AdamState
from .unet import ACTIVATIONS, Arch, DenoiserParams

MAGIC = b"S2FW"
VERSION = 1
_HEAD = struct.Struct("<4sI3IfI")


def write_checkpoint(path: str | Path, params: DenoiserParams, state: AdamState | None = None) -> None:
    """Header, JSON manifest of block names/shapes (and Adam step), then float32 LE blocks.

    When ``state`` is given its first and second moments follow the parameters
    in the same block order.
    """
    arch = params.arch
    manifest = {
        "blocks": [[name, list(v.shape)] for name, v in params.items()],
        "adam": None if state is None else {"t": state.t, "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, arch.levels, arch.channels, ACTIVATIONS[arch.activation], arch.slope, len(blob)))
        fh.write(blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
        if state is not None:
            for moments in (state.m, state.v):
                for name in params:
                    fh.write(np.ascontiguousarray(moments[name], dtype="<f4").tobytes())


def read_checkpoint(path: str | Path, dtype=np.float32) -> tuple[DenoiserParams, AdamState | None]:
    raw = Path(path).read_bytes()
    magic, version, levels, channels, act, slope, n = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: not an S2FW checkpoint")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    activation = {v: k for k, v in ACTIVATIONS.items()}[act]
    arch = Arch(levels=levels, channels=channels, activation=activation, slope=round(float(slope), 6))
    manifest = json.loads(raw[_HEAD.size : _HEAD.size + n])
    expected = [(name, tuple(shape)) for name, shape in manifest["blocks"]]
    if expected != [(name, shape) for name, shape in arch.block_shapes()]:
        raise ValidationError(f"{path}: block manifest does not match the architecture descriptor")
    offset = _HEAD.size + n

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(dtype)
        offset += 4 * count
        return arr

    params = DenoiserParams(arch, {name: take(shape) for name, shape in expected})
    state = None
    if manifest["adam"] is not None:
        a = manifest["adam"]
        m = {name: take(shape) for name, shape in expected}
        v = {name: take(shape) for name, shape in expected}
        state = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["t"], m, v)
    return params, state
