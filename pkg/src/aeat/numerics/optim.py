"""Parameter containers, AdamW and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autodiff import Tensor


class ParamStore:
    """Ordered name -> trainable Tensor map.

    Iteration order is insertion order, which is what checkpoints and the
    optimizer state rely on.
    """

    def __init__(self, items: dict[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (items or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self._params.values()])

    def unflatten(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size():
            raise ValueError(f"expected {self.size()} values, got {flat.size}")
        i = 0
        for t in self._params.values():
            n = t.data.size
            t.data = flat[i : i + n].reshape(t.data.shape).copy()
            i += n

    def copy(self) -> "ParamStore":
        return ParamStore({k: t.data.copy() for k, t in self._params.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}


@dataclass
class AdamW:
    """Adam with decoupled weight decay.

    Each step first shrinks every parameter by ``1 - lr * weight_decay`` and
    then applies the bias-corrected Adam update.
    """

    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ParamStore, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data * (1.0 - lr * self.weight_decay)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(params: ParamStore, opt: AdamW, lr: float | None = None) -> None:
    opt.step(params, lr)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
