"""Named trainable tensors and their checkpoint container."""

from __future__ import annotations

import math
import struct

import numpy as np

from .tensor import Tensor, read_tensor_raw, write_tensor_raw

CHECKPOINT_MAGIC = b"BANC"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Ordered, named collection of trainable tensors.

    Insertion order is the registration order of the model build, which
    makes initialization draws and checkpoint layout deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def create_conv_weight(self, name: str, cout: int, cin: int, k: int,
                           rng: np.random.Generator, dtype=np.float32) -> Tensor:
        # ReLU-gain fan-in uniform (variance 2/fan_in): without any
        # normalization layers, smaller gains let activations collapse
        # multiplicatively over depth and training stalls
        bound = math.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
        return self.add(name, Tensor(w, requires_grad=True, dtype=dtype))

    def create_zeros(self, name: str, shape, dtype=np.float32) -> Tensor:
        return self.add(name, Tensor(np.zeros(shape, dtype=dtype), requires_grad=True))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def replace(self, name: str, tensor: Tensor) -> None:
        """Swap an existing parameter tensor (used by gradient probes)."""
        if name not in self._params:
            raise KeyError(name)
        self._params[name] = tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def total_count(self) -> int:
        return sum(p.data.size for p in self._params.values())


def save_checkpoint(path, store: ParameterStore) -> None:
    """Write all named parameters: a name table interleaved with raw tensors."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(store)))
        for name, p in store.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            write_tensor_raw(f, p.data)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            out[name] = read_tensor_raw(f)
        return out


def restore_checkpoint(path, store: ParameterStore) -> None:
    """Load a checkpoint into an existing store, verifying names and shapes."""
    loaded = load_checkpoint(path)
    missing = [n for n in store.names() if n not in loaded]
    extra = [n for n in loaded if n not in store]
    bad_shape = [n for n, arr in loaded.items()
                 if n in store and store[n].data.shape != arr.shape]
    if missing or extra or bad_shape:
        parts = []
        if missing:
            parts.append(f"missing from checkpoint: {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected in checkpoint: {', '.join(extra)}")
        if bad_shape:
            parts.append(f"shape mismatch: {', '.join(bad_shape)}")
        raise ValueError(f"{path}: checkpoint does not match model ({'; '.join(parts)})")
    for name, arr in loaded.items():
        store[name].data = arr.astype(store[name].data.dtype)
        store[name].grad = None
