"""Feature modulation by normalization, scaling, and shifting.

A sequence is normalized per segment over its channels, then rescaled and
shifted with coefficients computed by attending over a conditioning
sequence.  Cross-modal normalization (CMN) conditions one modality on the
other; intra-modal normalization (IMN) conditions a sequence on itself.
Both coefficients pass through tanh, so they live in (-1, 1) and the
modulated output can never stray more than one unit beyond the normalized
feature.
"""

from __future__ import annotations

import math

from . import tensor as T
from .attention import MultiHeadAttention
from .init import uniform_param, zeros_param
from .rng import Rng
from .tensor import ShapeError, Tensor


def channel_normalize(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-std normalization of each row over its channels.

    Uses the population standard deviation; ``eps`` in the denominator
    turns constant rows into zeros instead of dividing by zero.
    """
    if x.ndim < 1 or x.shape[-1] < 2:
        raise ShapeError(f"channel_normalize: need at least 2 channels, got shape {x.shape}")
    mu = T.reduce_mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = T.reduce_mean(centered * centered, axis=-1, keepdims=True)
    return centered / (T.sqrt(var) + eps)


class ModulatingNorm:
    """Attention-derived scale/shift applied to a channel-normalized input."""

    def __init__(self, d: int, heads: int, rng: Rng, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.eps = eps
        self.mha = MultiHeadAttention(d, heads, rng)
        bound = 1.0 / math.sqrt(d)
        self.w_gamma = uniform_param(rng, (d, d), bound)
        self.b_gamma = zeros_param((d,))
        self.w_beta = uniform_param(rng, (d, d), bound)
        self.b_beta = zeros_param((d,))

    def modulate(self, target: Tensor, source: Tensor) -> Tensor:
        if target.shape != source.shape:
            raise ShapeError(f"modulate: target {target.shape} vs source {source.shape}")
        m = self.mha.attend(target, source, source)
        gamma = T.tanh(m @ self.w_gamma + self.b_gamma)
        beta = T.tanh(m @ self.w_beta + self.b_beta)
        return gamma * channel_normalize(target, self.eps) + beta

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return self.mha.named_parameters(prefix + "mha.") + [
            (f"{prefix}gamma.w", self.w_gamma),
            (f"{prefix}gamma.b", self.b_gamma),
            (f"{prefix}beta.w", self.w_beta),
            (f"{prefix}beta.b", self.b_beta),
        ]


def cmn(target: Tensor, source: Tensor, params: ModulatingNorm) -> Tensor:
    """Modulate ``target`` with scale/shift attended from ``source``."""
    return params.modulate(target, source)


def imn(x: Tensor, params: ModulatingNorm) -> Tensor:
    """Modulate ``x`` with scale/shift attended from itself."""
    return params.modulate(x, x)
