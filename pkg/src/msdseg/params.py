"""Named parameter store and its binary checkpoint format.

Checkpoint layout (little-endian): magic "MSDN", version u32, then one
record per tensor: name length u64, name bytes (utf-8), rank u64, extents
u64 each, payload f64. Records follow insertion order, so identical states
serialize to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import DimensionError, ParseError

CHECKPOINT_MAGIC = b"MSDN"
CHECKPOINT_VERSION = 1


class ModelState:
    """Ordered name -> Tensor mapping for all model parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if t.requires_grad]

    def load_values(self, other: "ModelState") -> None:
        """Copy values from another state in place; shapes must match."""
        missing = [n for n in self._params if n not in other]
        extra = [n for n in other._params if n not in self._params]
        if missing or extra:
            raise DimensionError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, t in self._params.items():
            src = other[name]
            if src.shape != t.shape:
                raise DimensionError(f"parameter {name!r}: checkpoint shape {src.shape} vs model shape {t.shape}")
            t.data[...] = src.data


def param_count(state: ModelState) -> int:
    """Total element count of trainable tensors; frozen ones are excluded."""
    return sum(t.size for _, t in state.trainable())


def checkpoint_save(state: ModelState, path: str | Path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, t in state.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", t.data.ndim))
        for extent in t.shape:
            chunks.append(struct.pack("<Q", extent))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def checkpoint_load(path: str | Path) -> ModelState:
    """Parse a checkpoint; loaded tensors do not require grad."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ParseError(f"{path}: truncated header", offset=len(blob))
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}", offset=4)

    state = ModelState()
    pos = 8

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ParseError(f"{path}: truncated while reading {what}", offset=pos)
        piece = blob[pos : pos + n]
        pos += n
        return piece

    while pos < len(blob):
        (name_len,) = struct.unpack("<Q", take(8, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        shape = tuple(struct.unpack("<Q", take(8, "extent"))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = take(8 * count, f"payload of {name!r}")
        data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        state.add(name, Tensor(data))
    return state
