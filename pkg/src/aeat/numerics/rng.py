"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, counter)``. Streams with
different keys are independent, so parallel work can derive one stream per
item from the item index and results never depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# fixed stream namespaces so different consumers of one seed never collide
CALIBRATION = 1 << 62
TRAIN = 2 << 60
DQN = 3 << 60
EVAL = 4 << 60
IMAGE = 5 << 60
INIT = 6 << 60
VERIFY = 7 << 60


@dataclass(frozen=True)
class RngStream:
    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.counter & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, (self.counter + index) & _MASK64)


def stream(seed: int, counter: int = 0) -> np.random.Generator:
    return RngStream(seed, counter).generator()
