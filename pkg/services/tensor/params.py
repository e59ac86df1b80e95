"""
Parameter Store
Version: 1.0

Ordered name -> (value, gradient) map holding every trainable tensor of a
model, plus the binary checkpoint codec.

Checkpoint layout (all integers little-endian):
    b"DLCK1\\n"
    repeated until EOF:
        u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 data
"""

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from services.errors import ContractViolationError, FormatError

logger = logging.getLogger(__name__)


CHECKPOINT_MAGIC = b"DLCK1\n"


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray


class ParamStore:
    """Named parameters with paired gradient buffers, in insertion order."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._entries: "OrderedDict[str, ParamEntry]" = OrderedDict()

    # === ACCESS ===

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        """Register a parameter; returns the stored value array."""
        if name in self._entries:
            raise ContractViolationError(f"duplicate parameter name: {name}")
        stored = np.array(value, dtype=self.dtype, copy=True)
        if stored.ndim == 0:
            stored = stored.reshape(1)
        self._entries[name] = ParamEntry(value=stored, grad=np.zeros_like(stored))
        return stored

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def names(self) -> List[str]:
        return list(self._entries)

    def items(self) -> Iterator[Tuple[str, ParamEntry]]:
        return iter(self._entries.items())

    def _entry(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise ContractViolationError(f"unknown parameter: {name}") from None

    def value(self, name: str) -> np.ndarray:
        return self._entry(name).value

    def grad(self, name: str) -> np.ndarray:
        return self._entry(name).grad

    def set_value(self, name: str, value: np.ndarray) -> None:
        entry = self._entry(name)
        value = np.asarray(value)
        if value.shape != entry.value.shape:
            raise ContractViolationError(
                f"parameter {name}: shape {value.shape} != stored {entry.value.shape}"
            )
        entry.value[...] = value

    def accumulate_grad(self, name: str, grad: np.ndarray) -> None:
        entry = self._entry(name)
        if grad.shape != entry.grad.shape:
            raise ContractViolationError(
                f"gradient for {name}: shape {grad.shape} != parameter {entry.grad.shape}"
            )
        entry.grad += grad

    def zero_grad(self) -> None:
        for entry in self._entries.values():
            entry.grad.fill(0)

    @property
    def num_parameters(self) -> int:
        return int(sum(entry.value.size for entry in self._entries.values()))

    def copy(self, dtype=None) -> "ParamStore":
        """Deep copy, optionally cast (float64 copies back gradient checks)."""
        clone = ParamStore(dtype=dtype or self.dtype)
        for name, entry in self._entries.items():
            clone.add(name, entry.value)
        return clone

    def load_values_from(self, other: "ParamStore") -> None:
        """Copy values from a store with identical names and shapes."""
        if other.names() != self.names():
            missing = set(self.names()) ^ set(other.names())
            raise ContractViolationError(f"parameter names differ: {sorted(missing)[:5]}")
        for name, entry in other.items():
            self.set_value(name, entry.value)

    # === CHECKPOINT CODEC ===

    def to_bytes(self) -> bytes:
        chunks = [CHECKPOINT_MAGIC]
        for name, entry in self._entries.items():
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ContractViolationError(f"parameter name too long: {name[:40]}...")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<B", entry.value.ndim))
            chunks.append(struct.pack(f"<{entry.value.ndim}I", *entry.value.shape))
            chunks.append(entry.value.astype("<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, path: Optional[str] = None) -> "ParamStore":
        if not data.startswith(CHECKPOINT_MAGIC):
            raise FormatError("not a checkpoint (bad magic bytes)", path)
        store = cls()
        offset = len(CHECKPOINT_MAGIC)
        view = memoryview(data)

        def take(size: int, what: str) -> memoryview:
            nonlocal offset
            if offset + size > len(data):
                raise FormatError(f"truncated checkpoint while reading {what}", path)
            chunk = view[offset:offset + size]
            offset += size
            return chunk

        while offset < len(data):
            (name_len,) = struct.unpack("<H", take(2, "name length"))
            try:
                name = bytes(take(name_len, "name")).decode("utf-8")
            except UnicodeDecodeError as e:
                raise FormatError(f"invalid parameter name encoding: {e}", path) from e
            (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
            dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name}"))
            count = int(np.prod(dims)) if rank else 1
            raw = take(4 * count, f"data of {name}")
            value = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
            if name in store:
                raise FormatError(f"duplicate parameter {name}", path)
            store.add(name, value)
        return store

    def save(self, path: Union[str, Path]) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as e:
            raise FormatError(f"cannot write checkpoint: {e}", str(path)) from e
        logger.debug(f"Saved {len(self)} parameters to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ParamStore":
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise FormatError(f"cannot read checkpoint: {e}", str(path)) from e
        return cls.from_bytes(data, str(path))
