"""Deterministic parameter initialization from the portable RNG.

Weights are filled row-major with uniforms mapped to [-bound, bound);
biases start at zero.  Construction order is fixed, so one seed pins every
parameter bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Tensor


def uniform_param(rng: Rng, shape: tuple[int, ...], bound: float) -> Tensor:
    n = int(np.prod(shape))
    vals = np.fromiter((rng.uniform() for _ in range(n)), dtype=np.float64, count=n)
    data = ((vals * 2.0 - 1.0) * bound).astype(np.float32).reshape(shape)
    return Tensor(data, requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
