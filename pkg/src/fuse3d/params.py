"""Named parameter tensors with gradient and momentum slots."""

from __future__ import annotations

from typing import Iterator

import numpy as np


class ParamStore:
    """Ordered mapping ``name -> array`` plus a same-shaped gradient slot.

    Batch-norm running statistics are registered as *buffers*: they live in
    the store (and in checkpoints) but are never touched by the optimizer.
    """

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}
        self.buffers: set[str] = set()

    def add(self, name: str, value: np.ndarray, buffer: bool = False) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, copy=True)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        if buffer:
            self.buffers.add(name)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def trainable(self) -> list[str]:
        return [k for k in self.values if k not in self.buffers]

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    @property
    def dtype(self):
        return next(iter(self.values.values())).dtype if self.values else np.float32

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(self.prefix)
        for k, v in self.values.items():
            out.add(k, v.astype(dtype), buffer=k in self.buffers)
        for k, v in self.velocity.items():
            out.velocity[k] = v.astype(dtype)
        return out

    def copy(self) -> "ParamStore":
        out = self.astype(self.dtype)
        for k, g in self.grads.items():
            out.grads[k][...] = g
        return out

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.values.items()}

    def num_parameters(self) -> int:
        return sum(self.values[k].size for k in self.trainable())
