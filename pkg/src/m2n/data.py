"""Synthetic audio-visual segment data and its binary interchange format.

Each sample is a short video cut into N one-second segments.  One event
category is planted over a contiguous span of at least two segments: inside
the span, both modalities carry a class-specific prototype direction plus
noise; outside, pure noise.  That gives every sample a per-segment label
sequence and a unique cross-modal ground truth (the span in one modality is
the answer when queried from the other).

Files use the "M2NF" v1 layout, little-endian throughout:

    bytes 0..3    magic 4D 32 4E 46 ("M2NF")
    u32           version (1)
    u32           N segments
    u32           d_v visual width
    u32           d_a audio width
    u32           C number of classes
    N x i32       per-segment labels, -1 = background
    N*d_v x f32   visual features, row-major
    N*d_a x f32   audio features, row-major

Header is exactly 24 bytes.  A dataset directory holds *.m2nf files plus a
manifest.txt naming them one per line, in order.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .rng import Rng, derive

MAGIC = b"M2NF"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")
MANIFEST = "manifest.txt"

# stream namespaces under the dataset seed
_TAG_PROTO = 1
_TAG_SAMPLE = 2
_TAG_SPLIT = 3


class FormatError(ValueError):
    """Base class for malformed feature files."""


class MagicError(FormatError):
    """File does not start with the M2NF magic bytes."""


class VersionError(FormatError):
    """File declares an unsupported format version."""


class TruncatedError(FormatError):
    """File ends before the header-declared payload."""


class LabelError(FormatError):
    """A stored label is outside {-1} union [0, C)."""


class DimensionError(FormatError):
    """Header dimensions are invalid or disagree with the byte length."""


class GenError(ValueError):
    """Invalid generation or split parameters."""


@dataclass
class SegmentFeatures:
    """One sample: per-segment features, labels, and the video-level class."""

    visual: np.ndarray
    audio: np.ndarray
    labels: np.ndarray
    num_classes: int
    video_class: int

    def __post_init__(self):
        self.visual = np.ascontiguousarray(self.visual, dtype=np.float32)
        self.audio = np.ascontiguousarray(self.audio, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.visual.ndim != 2 or self.audio.ndim != 2 or self.labels.ndim != 1:
            raise DimensionError("visual/audio must be 2-D and labels 1-D")
        n = self.labels.shape[0]
        if self.visual.shape[0] != n or self.audio.shape[0] != n:
            raise DimensionError(
                f"segment counts disagree: labels {n}, visual {self.visual.shape[0]}, "
                f"audio {self.audio.shape[0]}"
            )

    @property
    def n_segments(self) -> int:
        return self.labels.shape[0]

    def relevance(self) -> np.ndarray:
        """Binary per-segment event indicator (float32)."""
        return (self.labels >= 0).astype(np.float32)

    def event_span(self) -> tuple[int, int]:
        """(start, length) of the contiguous event run."""
        (idx,) = np.nonzero(self.labels >= 0)
        if idx.size == 0:
            raise GenError("sample has no event segments")
        start, end = int(idx[0]), int(idx[-1])
        if idx.size != end - start + 1:
            raise GenError("event segments are not contiguous")
        return start, end - start + 1


@dataclass
class GenSpec:
    """Generator parameters; the seed alone pins the dataset bit-exactly."""

    seed: int = 7
    num_samples: int = 400
    n_segments: int = 10
    d_v: int = 32
    d_a: int = 16
    num_classes: int = 5
    noise_std: float = 0.3
    signal_gain: float = 1.0

    def __post_init__(self):
        if self.n_segments < 2:
            raise GenError(f"n_segments must be >= 2, got {self.n_segments}")
        if self.num_samples < 1:
            raise GenError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.num_classes < 1:
            raise GenError(f"num_classes must be >= 1, got {self.num_classes}")
        if min(self.d_v, self.d_a) < 1:
            raise GenError("feature widths must be >= 1")
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0):
            raise GenError(f"noise_std must be finite and >= 0, got {self.noise_std}")
        if not math.isfinite(self.signal_gain):
            raise GenError(f"signal_gain must be finite, got {self.signal_gain}")


def prototype(seed: int, cls: int, modality: int, dim: int) -> np.ndarray:
    """Unit vector for (class, modality), a fixed function of the seed.

    ``modality`` is 0 for visual, 1 for audio.
    """
    rng = Rng(derive(seed, _TAG_PROTO, modality, cls))
    v = np.array(rng.normals(dim), dtype=np.float64)
    norm = float(np.sqrt((v * v).sum()))
    if norm < 1e-12:
        v[0], norm = 1.0, 1.0
    return (v / norm).astype(np.float32)


def generate(spec: GenSpec) -> list[SegmentFeatures]:
    """Build ``spec.num_samples`` samples; same spec, same bytes, always.

    Per-sample draw order is fixed: class, span length (uniform on
    [2, N]), span start, N*d_v visual noise values row-major, then
    N*d_a audio noise values row-major.
    """
    proto_v = [prototype(spec.seed, c, 0, spec.d_v) for c in range(spec.num_classes)]
    proto_a = [prototype(spec.seed, c, 1, spec.d_a) for c in range(spec.num_classes)]
    n = spec.n_segments
    samples = []
    for i in range(spec.num_samples):
        rng = Rng(derive(spec.seed, _TAG_SAMPLE, i))
        cls = rng.randint(spec.num_classes)
        length = 2 + rng.randint(n - 1)
        start = rng.randint(n - length + 1)
        visual = np.array(rng.normals(n * spec.d_v), dtype=np.float64).reshape(n, spec.d_v)
        audio = np.array(rng.normals(n * spec.d_a), dtype=np.float64).reshape(n, spec.d_a)
        visual = (visual * spec.noise_std).astype(np.float32)
        audio = (audio * spec.noise_std).astype(np.float32)
        visual[start:start + length] += spec.signal_gain * proto_v[cls]
        audio[start:start + length] += spec.signal_gain * proto_a[cls]
        labels = np.full(n, -1, dtype=np.int32)
        labels[start:start + length] = cls
        samples.append(
            SegmentFeatures(
                visual=visual,
                audio=audio,
                labels=labels,
                num_classes=spec.num_classes,
                video_class=cls,
            )
        )
    return samples


def write_sample(sample: SegmentFeatures, path: str) -> None:
    """Serialize one sample to ``path`` in M2NF v1 layout."""
    n, d_v = sample.visual.shape
    d_a = sample.audio.shape[1]
    blob = b"".join(
        (
            HEADER.pack(MAGIC, VERSION, n, d_v, d_a, sample.num_classes),
            sample.labels.astype("<i4").tobytes(),
            sample.visual.astype("<f4").tobytes(),
            sample.audio.astype("<f4").tobytes(),
        )
    )
    with open(path, "wb") as fh:
        fh.write(blob)


def read_sample(path: str) -> SegmentFeatures:
    """Parse one M2NF v1 file, raising a distinct error per defect class."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) >= 4 and blob[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < HEADER.size:
        raise TruncatedError(f"{path}: {len(blob)} bytes is shorter than the 24-byte header")
    magic, version, n, d_v, d_a, c = HEADER.unpack_from(blob)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if n < 1 or d_v < 1 or d_a < 1 or c < 1:
        raise DimensionError(f"{path}: invalid header dims N={n} d_v={d_v} d_a={d_a} C={c}")
    expected = HEADER.size + 4 * n + 4 * n * d_v + 4 * n * d_a
    if len(blob) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, found {len(blob)}")
    if len(blob) > expected:
        raise DimensionError(f"{path}: {len(blob) - expected} trailing bytes beyond declared shape")
    off = HEADER.size
    labels = np.frombuffer(blob, dtype="<i4", count=n, offset=off).astype(np.int32)
    off += 4 * n
    visual = np.frombuffer(blob, dtype="<f4", count=n * d_v, offset=off)
    off += 4 * n * d_v
    audio = np.frombuffer(blob, dtype="<f4", count=n * d_a, offset=off)
    if labels.min() < -1 or labels.max() >= c:
        bad = labels[(labels < -1) | (labels >= c)][0]
        raise LabelError(f"{path}: label {bad} outside [-1, {c})")
    event = labels[labels >= 0]
    video_class = int(event[0]) if event.size else -1
    return SegmentFeatures(
        visual=visual.astype(np.float32).reshape(n, d_v),
        audio=audio.astype(np.float32).reshape(n, d_a),
        labels=labels,
        num_classes=c,
        video_class=video_class,
    )


def sample_filename(index: int) -> str:
    return f"sample_{index:05d}.m2nf"


def write_dataset(samples: list[SegmentFeatures], out_dir: str) -> list[str]:
    """Write samples plus manifest.txt into ``out_dir``; returns the filenames."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, sample in enumerate(samples):
        name = sample_filename(i)
        write_sample(sample, os.path.join(out_dir, name))
        names.append(name)
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8") as fh:
        fh.write("".join(name + "\n" for name in names))
    return names


def read_dataset(in_dir: str) -> list[SegmentFeatures]:
    """Read every file listed in the directory's manifest, in order."""
    manifest = os.path.join(in_dir, MANIFEST)
    if not os.path.isfile(manifest):
        raise FormatError(f"{in_dir}: missing {MANIFEST}")
    with open(manifest, "r", encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    return [read_sample(os.path.join(in_dir, name)) for name in names]


def split(dataset, ratios: tuple[float, float, float], seed: int):
    """Shuffle indices by seed and cut into train/val/test lists.

    ``ratios`` must have three non-negative entries summing to 1.  The
    pieces are disjoint and cover every index.
    """
    n = len(dataset)
    if n == 0:
        raise GenError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise GenError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise GenError(f"ratios must sum to 1, got {sum(ratios)}")
    idx = list(range(n))
    Rng(derive(seed, _TAG_SPLIT)).shuffle(idx)
    n_train = round(ratios[0] * n)
    n_val = round((ratios[0] + ratios[1]) * n) - n_train
    train = sorted(idx[:n_train])
    val = sorted(idx[n_train:n_train + n_val])
    test = sorted(idx[n_train + n_val:])
    return train, val, test
