"""Fusing the two modality streams and re-modulating the fused sequence.

Two complementary views of the fused sequence are built:

* A multi-scale proposal path: every candidate span (i, j) with i <= j is
  summarized by the mean of the fused segments it covers, giving an
  N x N x d map.  A small 2-d convolution (with residual) lets adjacent
  proposals exchange information, and each segment then aggregates the
  proposals that start at it via a masked softmax over end indices,
  followed by one more self-attention pass.
* A dense pairwise alignment path: every (visual i, audio j) pair is fused
  by elementwise product into an N x N x d map, modulated as one flat
  sequence of N*N tokens, and the synchronized diagonal is read back out.

The two paths are summed into the final fused sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import MultiHeadAttention
from .init import uniform_param, zeros_param
from .modulation import ModulatingNorm, imn
from .rng import Rng
from .tensor import ShapeError, Tensor

_NEG_MASK_VALUE = np.float32(-1e9)


def fuse(f_v: Tensor, f_a: Tensor) -> Tensor:
    """Elementwise product of the two modality sequences."""
    if f_v.shape != f_a.shape:
        raise ShapeError(f"fuse: {f_v.shape} vs {f_a.shape}")
    return f_v * f_a


def fuse_final(f_ms: Tensor, f_ma: Tensor) -> Tensor:
    """Elementwise sum of the proposal and alignment outputs."""
    if f_ms.shape != f_ma.shape:
        raise ShapeError(f"fuse_final: {f_ms.shape} vs {f_ma.shape}")
    return f_ms + f_ma


@dataclass
class ProposalMap:
    """Span-mean feature map: entry (i, j) averages fused segments i..j.

    Entries below the diagonal (i > j) are zero and excluded from any
    attention by ``valid``.
    """

    features: Tensor  # (N, N, d)
    valid: np.ndarray  # (N, N) bool, True where i <= j


_span_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _span_constants(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-length constants: averaging matrix, validity mask, score mask."""
    cached = _span_cache.get(n)
    if cached is not None:
        return cached
    avg = np.zeros((n * n, n), dtype=np.float32)
    valid = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i, n):
            avg[i * n + j, i:j + 1] = 1.0 / (j - i + 1)
            valid[i, j] = True
    score_mask = np.where(valid, np.float32(0.0), _NEG_MASK_VALUE)
    _span_cache[n] = (avg, valid, score_mask)
    return avg, valid, score_mask


def build_proposal_map(f_ms: Tensor) -> ProposalMap:
    """Expand a fused sequence (N x d) into its span-mean map (N x N x d)."""
    if f_ms.ndim != 2:
        raise ShapeError(f"build_proposal_map: expected N x d, got {f_ms.shape}")
    n, d = f_ms.shape
    avg, valid, _ = _span_constants(n)
    flat = Tensor(avg) @ f_ms
    return ProposalMap(flat.reshape(n, n, d), valid)


class MspmParams:
    """Parameters of the multi-scale proposal path."""

    def __init__(self, d: int, heads: int, rng: Rng, eps: float = 1e-5, conv_size: int = 3):
        self.imn_fused = ModulatingNorm(d, heads, rng, eps)
        self.conv_kernel = uniform_param(
            rng, (conv_size, conv_size, d, d), 1.0 / math.sqrt(conv_size * conv_size * d)
        )
        self.conv_bias = zeros_param((d,))
        self.w_ms = uniform_param(rng, (d, d), 1.0 / math.sqrt(d))
        self.mha_out = MultiHeadAttention(d, heads, rng)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return (
            self.imn_fused.named_parameters(prefix + "imn.")
            + [
                (f"{prefix}conv.kernel", self.conv_kernel),
                (f"{prefix}conv.bias", self.conv_bias),
                (f"{prefix}w_ms", self.w_ms),
            ]
            + self.mha_out.named_parameters(prefix + "mha.")
        )


class MasmParams:
    """Parameters of the dense pairwise alignment path."""

    def __init__(self, d: int, heads: int, rng: Rng, eps: float = 1e-5):
        self.imn_pairs = ModulatingNorm(d, heads, rng, eps)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return self.imn_pairs.named_parameters(prefix + "imn.")


def mspm(f: Tensor, p: MspmParams, trace: dict | None = None) -> Tensor:
    """Modulate a fused sequence with its multi-scale proposal relations."""
    if f.ndim != 2:
        raise ShapeError(f"mspm: expected N x d, got {f.shape}")
    n, d = f.shape
    _, valid, score_mask = _span_constants(n)

    f_ms = imn(f, p.imn_fused)
    proposals = build_proposal_map(f_ms)
    refined = T.conv2d(proposals.features, p.conv_kernel, p.conv_bias) + proposals.features
    # convolution padding leaks into the i > j half; zero it back out
    refined = refined * Tensor(valid.astype(np.float32).reshape(n, n, 1))

    projected = f_ms @ p.w_ms
    scores = (projected @ projected.T) + Tensor(score_mask)
    # each start index i attends over the end indices j >= i of its proposals
    weights = T.softmax(scores, axis=-1)
    gathered = T.reduce_sum(weights.reshape(n, n, 1) * refined, axis=1)
    f_ms_prime = gathered + f_ms
    out = p.mha_out.attend(f_ms_prime, f_ms_prime, f_ms_prime)

    if trace is not None:
        trace.update(
            f_ms=f_ms,
            proposal_map=proposals,
            proposal_map_refined=refined,
            proposal_weights=weights,
            f_ms_prime=f_ms_prime,
        )
    return out


def masm(f_v: Tensor, f_a: Tensor, p: MasmParams, trace: dict | None = None) -> Tensor:
    """Modulate the dense visual-audio pair map and read back the diagonal.

    Pairs are flattened visual-major: pair (i, j) sits at row i*N + j.
    """
    if f_v.shape != f_a.shape:
        raise ShapeError(f"masm: {f_v.shape} vs {f_a.shape}")
    if f_v.ndim != 2:
        raise ShapeError(f"masm: expected N x d, got {f_v.shape}")
    n, d = f_v.shape
    pair_map = f_v.reshape(n, 1, d) * f_a.reshape(1, n, d)
    flat = pair_map.reshape(n * n, d)
    modulated = imn(flat, p.imn_pairs)
    diagonal = T.take_rows(modulated, np.arange(n) * n + np.arange(n))

    if trace is not None:
        trace.update(alignment_map=pair_map, alignment_modulated=modulated)
    return diagonal
