"""The full model: encoding, fusion, localization heads, losses, decoding.

Pipeline for one sample: project raw visual/audio segment features to a
common width, cross-modulate each modality on the other (CMN), then on
itself (IMN), fuse the two streams by elementwise product, run the fused
sequence through the proposal and alignment paths, and sum those into the
final sequence.  A max-pool over segments feeds a video-level classifier;
a per-segment linear+sigmoid head scores event relevance.

Cross-modality localization reuses the same parameters: the query span is
averaged into one vector, repeated to full length, and fed through the same
pipeline with the query modality's IMN skipped (its tokens are identical,
so self-attention over them carries nothing); only relevance is produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .fusion import MasmParams, MspmParams, fuse, fuse_final, masm, mspm
from .init import uniform_param, zeros_param
from .modulation import ModulatingNorm, channel_normalize, cmn, imn
from .rng import Rng, derive
from .tensor import Tensor


class ConfigError(ValueError):
    """Sample or checkpoint dimensions do not match the model configuration."""


class QueryError(ValueError):
    """Cross-modality query span is malformed for the sequence length."""


@dataclass
class M2NConfig:
    """Model dimensions: sequence length, raw widths, common width, heads, classes."""

    n_segments: int
    d_v: int
    d_a: int
    d: int = 64
    heads: int = 4
    num_classes: int = 5
    eps: float = 1e-5

    def __post_init__(self):
        if self.n_segments < 1:
            raise ConfigError(f"n_segments must be >= 1, got {self.n_segments}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} not divisible by {self.heads} heads")
        if min(self.d_v, self.d_a, self.d) < 2:
            raise ConfigError("feature widths must be >= 2")


@dataclass
class Ablation:
    """Component toggles; disabled modulations fall back to plain normalization,
    disabled fusion paths pass the fused sequence through unchanged."""

    use_cmn: bool = True
    use_imn: bool = True
    use_mspm: bool = True
    use_masm: bool = True


@dataclass
class ForwardTrace:
    """Intermediate activations of one forward pass, for tests and inspection."""

    f_v: Tensor | None = None
    f_a: Tensor | None = None
    fc_v: Tensor | None = None
    fc_a: Tensor | None = None
    fi_v: Tensor | None = None
    fi_a: Tensor | None = None
    fused: Tensor | None = None
    f_ms_out: Tensor | None = None
    f_ma_out: Tensor | None = None
    f_av: Tensor | None = None
    o_av: Tensor | None = None
    p_c: Tensor | None = None
    p_r: Tensor | None = None
    mspm_inner: dict = field(default_factory=dict)
    masm_inner: dict = field(default_factory=dict)


@dataclass
class SelOutput:
    """Video-level class distribution, per-segment relevance, and the trace."""

    p_c: Tensor
    p_r: Tensor
    trace: ForwardTrace


class ModelParams:
    """All learnable weights, addressable by hierarchical name.

    Construction order is fixed and every draw comes from one seeded
    stream, so (config, seed) pins the initialization bit-exactly.
    """

    def __init__(self, cfg: M2NConfig, seed: int):
        self.cfg = cfg
        rng = Rng(derive(seed, 0x1A17))
        d, h, eps = cfg.d, cfg.heads, cfg.eps
        self.proj_v_w = uniform_param(rng, (cfg.d_v, d), 1.0 / math.sqrt(cfg.d_v))
        self.proj_v_b = zeros_param((d,))
        self.proj_a_w = uniform_param(rng, (cfg.d_a, d), 1.0 / math.sqrt(cfg.d_a))
        self.proj_a_b = zeros_param((d,))
        self.cmn_v = ModulatingNorm(d, h, rng, eps)
        self.cmn_a = ModulatingNorm(d, h, rng, eps)
        self.imn_v = ModulatingNorm(d, h, rng, eps)
        self.imn_a = ModulatingNorm(d, h, rng, eps)
        self.mspm = MspmParams(d, h, rng, eps)
        self.masm = MasmParams(d, h, rng, eps)
        self.cls_w = uniform_param(rng, (d, cfg.num_classes), 1.0 / math.sqrt(d))
        self.cls_b = zeros_param((cfg.num_classes,))
        self.rel_w = uniform_param(rng, (d, 1), 1.0 / math.sqrt(d))
        self.rel_b = zeros_param((1,))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [
            ("proj_v.w", self.proj_v_w),
            ("proj_v.b", self.proj_v_b),
            ("proj_a.w", self.proj_a_w),
            ("proj_a.b", self.proj_a_b),
        ]
        out += self.cmn_v.named_parameters("cmn_v.")
        out += self.cmn_a.named_parameters("cmn_a.")
        out += self.imn_v.named_parameters("imn_v.")
        out += self.imn_a.named_parameters("imn_a.")
        out += self.mspm.named_parameters("mspm.")
        out += self.masm.named_parameters("masm.")
        out += [
            ("cls.w", self.cls_w),
            ("cls.b", self.cls_b),
            ("rel.w", self.rel_w),
            ("rel.b", self.rel_b),
        ]
        names = [n for n, _ in out]
        assert len(names) == len(set(names)), "duplicate parameter name"
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ConfigError(f"parameter name mismatch: missing={missing}, extra={extra}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != t.shape:
                raise ConfigError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data = arr.copy()


def _encode(
    visual: np.ndarray,
    audio: np.ndarray,
    params: ModelParams,
    cfg: M2NConfig,
    ablation: Ablation,
    skip_imn_v: bool = False,
    skip_imn_a: bool = False,
    trace: ForwardTrace | None = None,
) -> tuple[Tensor, ForwardTrace]:
    """Shared trunk: projection, CMN, IMN, fusion paths; returns the final sequence."""
    tr = trace if trace is not None else ForwardTrace()
    f_v = Tensor(visual) @ params.proj_v_w + params.proj_v_b
    f_a = Tensor(audio) @ params.proj_a_w + params.proj_a_b

    if ablation.use_cmn:
        fc_v = cmn(f_v, f_a, params.cmn_v)
        fc_a = cmn(f_a, f_v, params.cmn_a)
    else:
        fc_v = channel_normalize(f_v, cfg.eps)
        fc_a = channel_normalize(f_a, cfg.eps)

    if skip_imn_v:
        fi_v = fc_v
    elif ablation.use_imn:
        fi_v = imn(fc_v, params.imn_v)
    else:
        fi_v = channel_normalize(fc_v, cfg.eps)
    if skip_imn_a:
        fi_a = fc_a
    elif ablation.use_imn:
        fi_a = imn(fc_a, params.imn_a)
    else:
        fi_a = channel_normalize(fc_a, cfg.eps)

    fused = fuse(fi_v, fi_a)
    if ablation.use_mspm:
        f_ms_out = mspm(fused, params.mspm, trace=tr.mspm_inner)
    else:
        # pass-through stops at the module's input normalization: the
        # proposal map, its refinement, and the closing attention are cut
        f_ms_out = imn(fused, params.mspm.imn_fused)
    f_ma_out = masm(fi_v, fi_a, params.masm, trace=tr.masm_inner) if ablation.use_masm else fused
    f_av = fuse_final(f_ms_out, f_ma_out)

    tr.f_v, tr.f_a = f_v, f_a
    tr.fc_v, tr.fc_a = fc_v, fc_a
    tr.fi_v, tr.fi_a = fi_v, fi_a
    tr.fused, tr.f_ms_out, tr.f_ma_out, tr.f_av = fused, f_ms_out, f_ma_out, f_av
    return f_av, tr


def _relevance_head(f_av: Tensor, params: ModelParams, n: int) -> Tensor:
    return T.sigmoid(f_av @ params.rel_w + params.rel_b).reshape(n)


def _check_sample_dims(visual: np.ndarray, audio: np.ndarray, cfg: M2NConfig) -> None:
    if visual.shape != (cfg.n_segments, cfg.d_v) or audio.shape != (cfg.n_segments, cfg.d_a):
        raise ConfigError(
            f"sample shapes {visual.shape}/{audio.shape} do not match config "
            f"({cfg.n_segments}, {cfg.d_v})/({cfg.n_segments}, {cfg.d_a})"
        )


def forward_sel(sample, params: ModelParams, cfg: M2NConfig, ablation: Ablation | None = None) -> SelOutput:
    """Run the supervised localization forward pass on one sample."""
    ablation = ablation or Ablation()
    visual = np.asarray(sample.visual, dtype=np.float32)
    audio = np.asarray(sample.audio, dtype=np.float32)
    _check_sample_dims(visual, audio, cfg)

    f_av, tr = _encode(visual, audio, params, cfg, ablation)
    o_av = T.reduce_max(f_av, axis=0)
    logits = o_av.reshape(1, cfg.d) @ params.cls_w + params.cls_b
    p_c = T.softmax(logits, axis=-1).reshape(cfg.num_classes)
    p_r = _relevance_head(f_av, params, cfg.n_segments)

    tr.o_av, tr.p_c, tr.p_r = o_av, p_c, p_r
    return SelOutput(p_c=p_c, p_r=p_r, trace=tr)


def forward_cml(
    query: np.ndarray,
    context: np.ndarray,
    direction: str,
    params: ModelParams,
    cfg: M2NConfig,
    ablation: Ablation | None = None,
) -> Tensor:
    """Relevance scores for a query span from the other modality.

    ``direction`` is "a2v" (audio query of shape (l, d_a), visual context)
    or "v2a" (visual query of shape (l, d_v), audio context).  The query is
    averaged over its rows and repeated to the sequence length; its IMN is
    skipped because the repeated tokens are identical.
    """
    ablation = ablation or Ablation()
    if direction not in ("a2v", "v2a"):
        raise QueryError(f"direction must be a2v or v2a, got {direction!r}")
    query = np.asarray(query, dtype=np.float32)
    context = np.asarray(context, dtype=np.float32)
    if query.ndim != 2 or not 1 <= query.shape[0] <= cfg.n_segments:
        raise QueryError(f"query length must be in [1, {cfg.n_segments}], got shape {query.shape}")
    repeated = np.repeat(query.mean(axis=0, keepdims=True), cfg.n_segments, axis=0)

    if direction == "a2v":
        visual, audio = context, repeated
        skip_v, skip_a = False, True
    else:
        visual, audio = repeated, context
        skip_v, skip_a = True, False
    _check_sample_dims(visual, audio, cfg)
    f_av, _ = _encode(visual, audio, params, cfg, ablation, skip_imn_v=skip_v, skip_imn_a=skip_a)
    return _relevance_head(f_av, params, cfg.n_segments)


_CLAMP_LO, _CLAMP_HI = 1e-7, 1.0 - 1e-7


def _binary_cross_entropy(p_r: Tensor, relevance: np.ndarray) -> Tensor:
    r = np.asarray(relevance, dtype=np.float32)
    if r.shape != p_r.shape:
        raise ConfigError(f"relevance labels {r.shape} vs predictions {p_r.shape}")
    p = T.clamp(p_r, _CLAMP_LO, _CLAMP_HI)
    terms = Tensor(r) * T.log(p) + Tensor(1.0 - r) * T.log(1.0 - p)
    return -T.reduce_mean(terms)


def loss_sel(out: SelOutput, video_class: int, relevance: np.ndarray) -> Tensor:
    """Class cross-entropy plus mean per-segment relevance BCE."""
    c = out.p_c.size
    if not 0 <= video_class < c:
        raise ValueError(f"video class {video_class} out of range [0, {c})")
    onehot = np.zeros(c, dtype=np.float32)
    onehot[video_class] = 1.0
    picked = T.reduce_sum(T.clamp(out.p_c, _CLAMP_LO, _CLAMP_HI) * Tensor(onehot))
    return -T.log(picked) + _binary_cross_entropy(out.p_r, relevance)


def loss_cml(p_r: Tensor, relevance: np.ndarray) -> Tensor:
    """Mean per-segment relevance BCE (no class term)."""
    return _binary_cross_entropy(p_r, relevance)


def decode_sel(out: SelOutput) -> np.ndarray:
    """Per-segment labels: the argmax class where relevance >= 0.5, else -1."""
    cls = int(np.argmax(out.p_c.data))
    p_r = out.p_r.data
    return np.where(p_r >= 0.5, cls, -1).astype(np.int64)


def decode_cml(p_r, length: int) -> int:
    """Start of the length-``length`` window with maximum relevance sum.

    Ties resolve to the smallest start index.
    """
    scores = np.asarray(p_r.data if isinstance(p_r, Tensor) else p_r, dtype=np.float64)
    n = scores.shape[0]
    if not 1 <= length <= n:
        raise QueryError(f"window length {length} out of range [1, {n}]")
    sums = np.array([scores[s:s + length].sum() for s in range(n - length + 1)])
    return int(np.argmax(sums))
