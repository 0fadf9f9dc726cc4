"""Verify analytic gradients against central finite differences.

The checker perturbs every coordinate of every registered parameter, so a
wrong backward formula anywhere in the graph surfaces as a named parameter
with a large relative error.  Relative error uses a 0.01 floor in the
denominator so near-zero derivatives are compared absolutely.

The numeric route evaluates the loss in float64, independent of the
engine's float32 rounding.  That allows a step small enough that the
max-pool's argmax never flips between the two probe points, which would
otherwise straddle a kink and produce spurious disagreement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .data import GenSpec, generate
from .network import M2NConfig, ModelParams, forward_cml, forward_sel, loss_cml, loss_sel
from .rng import Rng, derive
from .tensor import Tensor


@dataclass
class ParamReport:
    """Worst finite-difference disagreement over one parameter tensor."""

    name: str
    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 0.01)


def check_gradients(
    build_loss: Callable[[], Tensor],
    named_params: list[tuple[str, Tensor]],
    step: float = 1e-5,
) -> list[ParamReport]:
    """Compare backward() output against central differences, coordinate-wise.

    ``build_loss`` must rebuild the scalar loss from the parameters' current
    data on every call.  Every parameter appears in the report exactly once.
    """
    for _, p in named_params:
        p.grad = None
    build_loss().backward()
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros(p.shape, dtype=np.float32))
        for name, p in named_params
    }

    def loss_value() -> float:
        with T.no_grad(), T.precision(np.float64):
            return float(build_loss().item())

    reports = []
    for name, p in named_params:
        flat = p.data.reshape(-1)
        g = grads[name].reshape(-1)
        worst = ParamReport(name, -1.0, 0, 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            plus = np.float32(float(orig) + step)
            minus = np.float32(float(orig) - step)
            flat[i] = plus
            f_plus = loss_value()
            flat[i] = minus
            f_minus = loss_value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (float(plus) - float(minus))
            err = relative_error(float(g[i]), fd)
            if err > worst.max_rel_err:
                worst = ParamReport(name, err, i, float(g[i]), fd)
        reports.append(worst)
    return reports


def model_gradcheck(
    n_segments: int = 4,
    d: int = 8,
    heads: int = 2,
    num_classes: int = 3,
    d_v: int = 6,
    d_a: int = 5,
    seed: int = 11,
    step: float = 1e-5,
) -> list[ParamReport]:
    """Gradcheck the whole model on one synthetic sample.

    The loss sums a supervised localization term and a cross-modality term
    so both forward routes contribute gradient to every parameter path.
    Parameters are jittered away from the freshly initialized point: there
    the modulation gates are all near zero, segment features nearly
    coincide, and the max-pool sits on a knife-edge where finite
    differences straddle argmax flips.  A generic point has well-separated
    maxima, so the comparison tests the formulas rather than the kink.
    """
    spec = GenSpec(
        seed=seed,
        num_samples=1,
        n_segments=n_segments,
        d_v=d_v,
        d_a=d_a,
        num_classes=num_classes,
        noise_std=0.3,
    )
    sample = generate(spec)[0]
    cfg = M2NConfig(
        n_segments=n_segments,
        d_v=d_v,
        d_a=d_a,
        d=d,
        heads=heads,
        num_classes=num_classes,
    )
    params = ModelParams(cfg, seed)
    jitter = Rng(derive(seed, 0x6A17))
    for _, p in params.named_parameters():
        offsets = np.array(jitter.uniforms(p.size), dtype=np.float32).reshape(p.shape)
        p.data = p.data + (offsets - 0.5) * 0.2

    start, length = sample.event_span()
    query = sample.audio[start:start + length]
    rel = sample.relevance()

    def build_loss() -> Tensor:
        out = forward_sel(sample, params, cfg)
        sel_term = loss_sel(out, sample.video_class, rel)
        p_r = forward_cml(query, sample.visual, "a2v", params, cfg)
        return sel_term + loss_cml(p_r, rel)

    return check_gradients(build_loss, params.named_parameters(), step)
