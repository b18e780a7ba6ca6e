"""Parameter checkpoints.

One file: an ASCII manifest (one line per tensor: name, shape, byte
offset into the payload, element count), a line reading ``end``, then the
raw payload of little-endian 64-bit reals.  Values are stored as float64
regardless of the engine's active dtype.
"""

from __future__ import annotations

import numpy as np

from .tensor import EngineError

MAGIC = "PROTOFORM-CKPT v1"


def save_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    lines = [MAGIC]
    offset = 0
    blobs = []
    for name in tensors:
        if any(ch.isspace() for ch in name):
            raise EngineError(f"checkpoint: tensor name {name!r} contains whitespace")
        arr = np.asarray(tensors[name], dtype="<f8")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = arr.copy(order="C")
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"tensor {name} {shape} {offset} {arr.size}")
        blobs.append(arr.tobytes())
        offset += arr.size * 8
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    head, sep, _ = raw.partition(b"\nend\n")
    if not sep:
        raise EngineError(f"checkpoint {path}: missing manifest terminator")
    payload = raw[len(head) + len(sep):]
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != MAGIC:
        raise EngineError(f"checkpoint {path}: bad magic")
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        kind, name, shape_s, offset_s, count_s = line.split(" ")
        if kind != "tensor":
            raise EngineError(f"checkpoint {path}: unexpected manifest line {line!r}")
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        offset, count = int(offset_s), int(count_s)
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(shape).copy()
    return out
