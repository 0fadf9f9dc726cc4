"""Multi-head scaled dot-product attention.

Each head projects queries, keys, and values with its own learned matrices,
scores queries against keys scaled by 1/sqrt(head width), softmaxes the
scores over the keys, and mixes the values.  Head outputs are concatenated
and passed through an output projection.  There is no positional encoding,
masking, dropout, or residual wiring here; callers compose those if needed.
"""

from __future__ import annotations

import math

from . import tensor as T
from .init import uniform_param, zeros_param
from .rng import Rng
from .tensor import ShapeError, Tensor


class MultiHeadAttention:
    """Attention block of width ``d`` with ``heads`` heads of width ``d_head``.

    All projections carry biases.  Weights initialize uniformly in
    [-1/sqrt(d), 1/sqrt(d)] so pre-softmax scores start at order one;
    biases initialize to zero.
    """

    def __init__(self, d: int, heads: int, rng: Rng, d_head: int | None = None):
        if heads < 1:
            raise ValueError(f"need at least one head, got {heads}")
        if d_head is None:
            if d % heads != 0:
                raise ValueError(f"width {d} not divisible by {heads} heads")
            d_head = d // heads
        self.d = d
        self.heads = heads
        self.d_head = d_head
        bound = 1.0 / math.sqrt(d)
        self.wq = [uniform_param(rng, (d, d_head), bound) for _ in range(heads)]
        self.bq = [zeros_param((d_head,)) for _ in range(heads)]
        self.wk = [uniform_param(rng, (d, d_head), bound) for _ in range(heads)]
        self.bk = [zeros_param((d_head,)) for _ in range(heads)]
        self.wv = [uniform_param(rng, (d, d_head), bound) for _ in range(heads)]
        self.bv = [zeros_param((d_head,)) for _ in range(heads)]
        self.wo = uniform_param(rng, (heads * d_head, d), bound)
        self.bo = zeros_param((d,))

    def attend(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        """Attend ``q`` (n_q x d) over ``k``/``v`` (n_k x d); returns n_q x d."""
        if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
            raise ShapeError("attend: expected 2-d inputs")
        if q.shape[1] != self.d or k.shape[1] != self.d or v.shape[1] != self.d:
            raise ShapeError(
                f"attend: widths {(q.shape[1], k.shape[1], v.shape[1])} != model width {self.d}"
            )
        if k.shape[0] != v.shape[0]:
            raise ShapeError(f"attend: {k.shape[0]} keys vs {v.shape[0]} values")
        scale = 1.0 / math.sqrt(self.d_head)
        outputs = []
        for i in range(self.heads):
            qi = q @ self.wq[i] + self.bq[i]
            ki = k @ self.wk[i] + self.bk[i]
            vi = v @ self.wv[i] + self.bv[i]
            scores = (qi @ ki.T) * scale
            weights = T.softmax(scores, axis=-1)
            outputs.append(weights @ vi)
        return T.concat(outputs, axis=1) @ self.wo + self.bo

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for i in range(self.heads):
            out += [
                (f"{prefix}head{i}.wq", self.wq[i]),
                (f"{prefix}head{i}.bq", self.bq[i]),
                (f"{prefix}head{i}.wk", self.wk[i]),
                (f"{prefix}head{i}.bk", self.bk[i]),
                (f"{prefix}head{i}.wv", self.wv[i]),
                (f"{prefix}head{i}.bv", self.bv[i]),
            ]
        out += [(f"{prefix}wo", self.wo), (f"{prefix}bo", self.bo)]
        return out
