"""Embedding sets: synthetic generation, normalization, binary persistence.

An :class:`EmbeddingSet` is an immutable ``(n, dim)`` float64 matrix of
feature vectors with optional integer identity labels.  Rows live on the unit
sphere once :func:`l2_normalize` has run, which makes cosine similarity a
plain dot product for everything downstream.

Files use a small binary layout (magic ``DCEB``) that stores rows as IEEE-754
float32.  A float64 vector survives a save/load round trip bit-exactly iff its
entries are float32-representable; everything produced by :func:`load` is.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError

MAGIC = b"DCEB"
FORMAT_VERSION = 1
UNLABELED = -1

_FLAG_NORMALIZED = 0x1
_FLAG_LABELS = 0x2
_HEADER = struct.Struct("<4sHHQI")

# l2_normalize produces unit rows to ~1e-15; float32 quantization on disk can
# push loaded norms to ~1e-7 off, hence the looser constructor check.
_NORM_TOL = 1e-6


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for sampling labeled clusters on the unit sphere."""

    num_clusters: int
    points_per_cluster: int
    dim: int
    intra_spread: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_clusters < 1 or self.points_per_cluster < 1:
            raise ValueError("cluster and point counts must be positive")
        if self.dim < 2:
            raise ValueError(f"dim must be at least 2, got {self.dim}")
        if not np.isfinite(self.intra_spread) or self.intra_spread < 0:
            raise ValueError("intra_spread must be finite and non-negative")


@dataclass(frozen=True)
class EmbeddingSet:
    """N feature vectors with optional identity labels (-1 means unlabeled).

    Arrays are marked read-only at construction; the set is safe to share
    across threads.
    """

    rows: np.ndarray
    labels: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 2:
            raise ValueError(f"rows must be (n >= 1, dim >= 2), got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("rows contain non-finite entries")
        object.__setattr__(self, "rows", _frozen(rows))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int32)
            if labels.shape != (rows.shape[0],):
                raise ValueError(
                    f"labels must have length {rows.shape[0]}, got shape {labels.shape}"
                )
            object.__setattr__(self, "labels", _frozen(labels))
        if self.normalized:
            norms = np.linalg.norm(rows, axis=1)
            if np.max(np.abs(norms - 1.0)) > _NORM_TOL:
                raise ValueError("normalized flag set but rows are not unit norm")

    @property
    def count(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]


def generate_synthetic(spec: SyntheticSpec) -> EmbeddingSet:
    """Sample isotropic Gaussian blobs re-projected onto the unit sphere.

    Each cluster draws a random unit center, then each point is
    ``normalize(center + intra_spread * standard_normal(dim))``.  Labels are
    the cluster ids.  Fully determined by ``spec.seed``: all centers are drawn
    first, then per-cluster noise in cluster order.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.num_clusters, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    blocks = []
    for c in range(spec.num_clusters):
        pts = centers[c] + spec.intra_spread * rng.standard_normal(
            (spec.points_per_cluster, spec.dim)
        )
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise DegenerateInputError("a sampled point collapsed to the origin")
        blocks.append(pts / norms)
    labels = np.repeat(
        np.arange(spec.num_clusters, dtype=np.int32), spec.points_per_cluster
    )
    return EmbeddingSet(rows=np.vstack(blocks), labels=labels, normalized=True)


def l2_normalize(e: EmbeddingSet) -> EmbeddingSet:
    """Return a copy whose rows all have unit Euclidean norm.

    Raises :class:`DegenerateInputError` naming the first zero-norm row.
    Idempotent: normalizing an already-normalized set leaves rows unchanged
    to within a few ulp.
    """
    norms = np.linalg.norm(e.rows, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateInputError(f"row {bad[0]} has zero norm")
    return EmbeddingSet(rows=e.rows / norms[:, None], labels=e.labels, normalized=True)


def save(e: EmbeddingSet, path) -> None:
    """Write the binary embedding format (rows quantized to float32)."""
    flags = 0
    if e.normalized:
        flags |= _FLAG_NORMALIZED
    if e.labels is not None:
        flags |= _FLAG_LABELS
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, flags, e.count, e.dim))
        fh.write(np.ascontiguousarray(e.rows, dtype="<f4").tobytes())
        if e.labels is not None:
            fh.write(np.ascontiguousarray(e.labels, dtype="<i4").tobytes())


def load(path) -> EmbeddingSet:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file too short for header", offset=len(data))
    magic, version, flags, n, d = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if n < 1 or d < 2:
        raise FormatError(f"header claims n={n}, dim={d}", offset=8)
    rows_bytes = 4 * n * d
    labels_bytes = 4 * n if flags & _FLAG_LABELS else 0
    expected = _HEADER.size + rows_bytes + labels_bytes
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes for n={n}, dim={d}, got {len(data)}",
            offset=min(len(data), expected),
        )
    rows = (
        np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size)
        .reshape(n, d)
        .astype(np.float64)
    )
    labels = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(
            data, dtype="<i4", count=n, offset=_HEADER.size + rows_bytes
        ).astype(np.int32)
    return EmbeddingSet(
        rows=rows, labels=labels, normalized=bool(flags & _FLAG_NORMALIZED)
    )


def load_labels_text(path) -> np.ndarray:
    """Read identity labels from a plain text file, one integer per line."""
    out = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise FormatError(f"line {ln} is not an integer: {line!r}") from None
    if not out:
        raise FormatError("label file contains no labels")
    return np.asarray(out, dtype=np.int32)
