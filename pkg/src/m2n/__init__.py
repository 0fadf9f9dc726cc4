"""Audio-visual event localization with cross- and intra-modality modulation.

A self-contained implementation: a small reverse-mode autograd engine on
numpy float32 storage, multi-head attention, modulation-based normalization,
multi-scale proposal and dense alignment fusion, training/evaluation on a
planted synthetic dataset, and a binary feature-file format.
"""

from .data import FormatError, GenSpec, SegmentFeatures, generate, read_sample, write_sample
from .network import (
    Ablation,
    ConfigError,
    M2NConfig,
    ModelParams,
    QueryError,
    decode_cml,
    decode_sel,
    forward_cml,
    forward_sel,
    loss_cml,
    loss_sel,
)
from .tensor import ShapeError, Tensor, no_grad
from .training import TrainConfig, eval_cml, eval_sel, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Ablation",
    "ConfigError",
    "FormatError",
    "GenSpec",
    "M2NConfig",
    "ModelParams",
    "QueryError",
    "SegmentFeatures",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "decode_cml",
    "decode_sel",
    "eval_cml",
    "eval_sel",
    "forward_cml",
    "forward_sel",
    "generate",
    "load_checkpoint",
    "loss_cml",
    "loss_sel",
    "no_grad",
    "read_sample",
    "save_checkpoint",
    "train",
    "write_sample",
    "__version__",
]
