"""Exact kNN graph construction over cosine similarity, plus noise injection.

The graph stores, per node, its K most similar nodes (self included, always
first) and the aligned similarities, sorted in non-increasing order.  Ties
break toward the smaller node index so results are reproducible and directly
comparable against a full-sort oracle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet
from .errors import DegenerateInputError, FormatError

GRAPH_MAGIC = b"DCKG"
_GRAPH_HEADER = struct.Struct("<4sQI")


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KnnGraph:
    """Per-node sorted neighbor indices and similarities.

    neighbors: (n, k) int32, row i starts with i itself.
    sims: (n, k) float64, non-increasing per row, sims[i, 0] == 1.
    """

    neighbors: np.ndarray
    sims: np.ndarray

    def __post_init__(self):
        nb = np.asarray(self.neighbors, dtype=np.int32)
        sm = np.asarray(self.sims, dtype=np.float64)
        if nb.ndim != 2 or nb.shape != sm.shape:
            raise ValueError(f"neighbors/sims shape mismatch: {nb.shape} vs {sm.shape}")
        n, k = nb.shape
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        if np.any(nb < 0) or np.any(nb >= n):
            raise ValueError("neighbor index out of range")
        if not np.array_equal(nb[:, 0], np.arange(n, dtype=np.int32)):
            raise ValueError("row i must start with node i itself")
        if np.max(np.abs(sm[:, 0] - 1.0)) > 1e-6:
            raise ValueError("self-similarity must be 1")
        if np.any(sm < -1.0 - 1e-9) or np.any(sm > 1.0 + 1e-9):
            raise ValueError("similarities outside [-1, 1]")
        if k > 1 and np.any(np.diff(sm, axis=1) > 1e-12):
            raise ValueError("similarity rows must be non-increasing")
        for i in range(n):
            if len(set(nb[i].tolist())) != k:
                raise ValueError(f"row {i} contains duplicate neighbor indices")
        object.__setattr__(self, "neighbors", _frozen(nb))
        object.__setattr__(self, "sims", _frozen(sm))

    @property
    def n(self):
        return self.neighbors.shape[0]

    @property
    def k(self):
        return self.neighbors.shape[1]


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two vectors; exactly symmetric in its arguments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"expected equal-length 1d vectors, got {a.shape}, {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for the zero vector")
    return float(np.dot(a, b) / (na * nb))


def build_knn(e: EmbeddingSet, k: int) -> KnnGraph:
    """Exact brute-force kNN graph under cosine similarity.

    Row i holds the k globally most similar nodes including i itself (always
    first); remaining entries sort by descending similarity with ties broken
    by ascending node index.  Requires normalized embeddings so the Gram
    matrix is the similarity matrix.
    """
    if not e.normalized:
        raise ValueError("embeddings must be l2-normalized before graph construction")
    n = e.count
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    gram = e.rows @ e.rows.T
    np.clip(gram, -1.0, 1.0, out=gram)
    neighbors = np.empty((n, k), dtype=np.int32)
    sims = np.empty((n, k), dtype=np.float64)
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, -gram[i]))
        order = order[order != i][: k - 1]
        neighbors[i, 0] = i
        sims[i, 0] = 1.0
        neighbors[i, 1:] = order
        sims[i, 1:] = gram[i, order]
    return KnnGraph(neighbors=neighbors, sims=sims)


def inject_noise(g: KnnGraph, ratio: float, seed: int, return_mask: bool = False):
    """Randomly corrupt a fraction of similarity entries, then renormalize.

    Exactly ``floor(ratio * n * (k - 1))`` non-self entries, chosen uniformly
    without replacement, are replaced by uniform draws in [0, 1].  Every row
    is then min-max mapped into [0, 1] (a constant row maps to all ones) and
    re-sorted in descending order with neighbors permuted in lockstep; the
    self entry stays first.  Deterministic given ``seed``.

    With ``return_mask`` the boolean (n, k) selection mask is also returned.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    n, k = g.n, g.k
    sims = g.sims.copy()
    neighbors = g.neighbors.copy()
    mask = np.zeros((n, k), dtype=bool)
    total = n * (k - 1)
    count = int(np.floor(ratio * total))
    if count > 0:
        flat = rng.choice(total, size=count, replace=False)
        rows = flat // (k - 1)
        cols = flat % (k - 1) + 1
        sims[rows, cols] = rng.random(count)
        mask[rows, cols] = True

    lo = sims.min(axis=1, keepdims=True)
    hi = sims.max(axis=1, keepdims=True)
    span = hi - lo
    flat_rows = (span == 0.0).ravel()
    span[span == 0.0] = 1.0
    sims = (sims - lo) / span
    sims[flat_rows, :] = 1.0

    if k > 1:
        for i in range(n):
            order = np.lexsort((neighbors[i, 1:], -sims[i, 1:]))
            neighbors[i, 1:] = neighbors[i, 1:][order]
            sims[i, 1:] = sims[i, 1:][order]
    out = KnnGraph(neighbors=neighbors, sims=sims)
    return (out, mask) if return_mask else out


def save_graph(g: KnnGraph, path) -> None:
    """Write the binary graph format (similarities quantized to float32)."""
    with open(path, "wb") as fh:
        fh.write(_GRAPH_HEADER.pack(GRAPH_MAGIC, g.n, g.k))
        fh.write(np.ascontiguousarray(g.neighbors, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(g.sims, dtype="<f4").tobytes())


def load_graph(path) -> KnnGraph:
    data = Path(path).read_bytes()
    if len(data) < _GRAPH_HEADER.size:
        raise FormatError("file too short for header", offset=len(data))
    magic, n, k = _GRAPH_HEADER.unpack_from(data, 0)
    if magic != GRAPH_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GRAPH_MAGIC!r}", offset=0)
    expected = _GRAPH_HEADER.size + 4 * n * k + 4 * n * k
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes for n={n}, k={k}, got {len(data)}",
            offset=min(len(data), expected),
        )
    neighbors = (
        np.frombuffer(data, dtype="<u4", count=n * k, offset=_GRAPH_HEADER.size)
        .reshape(n, k)
        .astype(np.int32)
    )
    sims = (
        np.frombuffer(data, dtype="<f4", count=n * k, offset=_GRAPH_HEADER.size + 4 * n * k)
        .reshape(n, k)
        .astype(np.float64)
    )
    return KnnGraph(neighbors=neighbors, sims=sims)
