"""Distance transforms, edge probabilities, and neighbor-overlap edge scores.

The chain is: cosine similarity -> squared chord distance d = 2 - 2a ->
pointwise transform (exponential or sigmoid) -> per-row normalization into a
row-stochastic table.  Pairwise scores then generalize the Jaccard
coefficient by weighting shared neighbors with these probabilities, either
over full K-neighborhoods or truncated to a per-node depth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .knn import KnnGraph

# Sigmoid transform defaults: steepness 7.5 and offset -5 place the midpoint
# at d = 2/3 (cosine 2/3), sharpening contrast around borderline neighbors.
DEFAULT_DELTA = 7.5
DEFAULT_EPSILON = -5.0
DEFAULT_TAU = 0.25


@dataclass(frozen=True)
class TransformConfig:
    """Distance-to-probability transform selection and constants."""

    kind: str = "sigmoid"  # "exp" | "sigmoid"
    tau: float = DEFAULT_TAU
    delta: float = DEFAULT_DELTA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in ("exp", "sigmoid"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("tau", "delta", "epsilon"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def dist_from_sim(a):
    """Map cosine similarity in [-1, 1] to distance d = 2 - 2a in [0, 4]."""
    arr = np.asarray(a, dtype=np.float64)
    if np.any(arr < -1.0 - 1e-9) or np.any(arr > 1.0 + 1e-9):
        raise ValueError("cosine similarity outside [-1, 1]")
    d = 2.0 - 2.0 * np.clip(arr, -1.0, 1.0)
    return float(d) if arr.ndim == 0 else d


def prob_exp(d, tau: float = DEFAULT_TAU):
    """Exponential transform exp(-d / tau); the re-ranking baseline."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < -1e-12):
        raise ValueError("distance must be non-negative")
    p = np.exp(-np.maximum(arr, 0.0) / tau)
    return float(p) if arr.ndim == 0 else p


def prob_sigmoid(d, cfg: TransformConfig | None = None):
    """Sigmoid transform 1 / (1 + exp(delta * d + epsilon)).

    Steeper than the exponential around the midpoint -epsilon/delta, which
    widens the gap between borderline same- and different-identity pairs.
    """
    delta = cfg.delta if cfg is not None else DEFAULT_DELTA
    epsilon = cfg.epsilon if cfg is not None else DEFAULT_EPSILON
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < -1e-12):
        raise ValueError("distance must be non-negative")
    z = np.clip(delta * np.maximum(arr, 0.0) + epsilon, -700.0, 700.0)
    p = 1.0 / (1.0 + np.exp(z))
    return float(p) if arr.ndim == 0 else p


def transform_probs(sims, cfg: TransformConfig):
    """Apply the configured transform to a similarity array."""
    d = dist_from_sim(sims)
    if cfg.kind == "exp":
        return prob_exp(d, cfg.tau)
    return prob_sigmoid(d, cfg)


class EdgeProbTable:
    """Row-stochastic edge probabilities aligned with a graph's neighbor slots.

    ``raw`` holds the transformed distances, ``norm`` the per-row normalized
    probabilities, ``row_sums`` the normalizers.  The source graph is needed
    for any pairwise score; plain matrices without a graph still normalize.
    """

    def __init__(self, raw, graph: KnnGraph | None = None):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2:
            raise ValueError(f"raw must be 2d, got shape {raw.shape}")
        if not np.all(np.isfinite(raw)) or np.any(raw < 0):
            raise ValueError("raw probabilities must be finite and non-negative")
        if graph is not None and raw.shape != graph.neighbors.shape:
            raise ValueError("raw shape does not match the graph")
        sums = raw.sum(axis=1)
        bad = np.flatnonzero(sums <= 0.0)
        if bad.size:
            raise DegenerateInputError(f"row {bad[0]} has zero probability mass")
        self.graph = graph
        self.raw = raw
        self.row_sums = sums
        self.norm = raw / sums[:, None]
        self._pos = None

    @property
    def n(self):
        return self.raw.shape[0]

    @property
    def k(self):
        return self.raw.shape[1]

    def position_maps(self):
        """Per-node dict mapping neighbor id -> slot in that node's row."""
        if self._pos is None:
            if self.graph is None:
                raise ValueError("pairwise scores need a graph-backed table")
            self._pos = [
                {int(nb): s for s, nb in enumerate(row)} for row in self.graph.neighbors
            ]
        return self._pos

    def prob_toward(self, h: int, j: int) -> float:
        """Normalized probability from node h toward j; 0 if j is not h's neighbor."""
        slot = self.position_maps()[h].get(j)
        return 0.0 if slot is None else float(self.norm[h, slot])


def normalize_probs(raw, graph: KnnGraph | None = None) -> EdgeProbTable:
    """Row-normalize raw probabilities into an :class:`EdgeProbTable`."""
    return EdgeProbTable(raw, graph)


def build_edge_table(g: KnnGraph, cfg: TransformConfig) -> EdgeProbTable:
    """Transform a graph's similarities and normalize them per row."""
    return EdgeProbTable(transform_probs(g.sims, cfg), g)


def jaccard_basic(ni, nj) -> float:
    """Plain Jaccard coefficient |A & B| / |A | B| over two index sets."""
    a = {int(x) for x in ni}
    b = {int(x) for x in nj}
    if not a or not b:
        raise ValueError("neighbor sets must be nonempty")
    return len(a & b) / len(a | b)


def round_topk(topk: int, k: int) -> int:
    """Round a predicted neighbor count up to a multiple of 10, capped at k."""
    if topk < 1:
        raise ValueError(f"topk must be >= 1, got {topk}")
    if k < 10:
        raise ValueError(f"k must be >= 10, got {k}")
    if topk >= k:
        return k
    return min(10 * ((topk + 9) // 10), k)


@dataclass(frozen=True)
class TopKVector:
    """Per-node truncation depths as produced by :func:`round_topk`."""

    khat: np.ndarray
    k: int

    def __post_init__(self):
        khat = np.asarray(self.khat, dtype=np.int64)
        if khat.ndim != 1:
            raise ValueError("khat must be 1d")
        if np.any(khat < 1) or np.any(khat > self.k):
            raise ValueError(f"khat entries must lie in [1, {self.k}]")
        rounded = (khat % 10 == 0) & (khat >= 10)
        if not np.all(rounded | (khat == self.k)):
            raise ValueError("khat entries must be multiples of 10 or equal to k")
        arr = np.ascontiguousarray(khat)
        arr.setflags(write=False)
        object.__setattr__(self, "khat", arr)


def _khat_array(khat, n: int, k: int) -> np.ndarray:
    if isinstance(khat, TopKVector):
        arr = khat.khat
    else:
        arr = np.asarray(khat, dtype=np.int64)
    if arr.shape != (n,):
        raise ValueError(f"khat must have length {n}")
    if np.any(arr < 1) or np.any(arr > k):
        raise ValueError(f"khat entries must lie in [1, {k}]")
    return arr


def _pair_score(table: EdgeProbTable, i: int, j: int, depth: int) -> float:
    """Shared-neighbor probability mass over total mass, truncated to depth.

    Numerator sums p(i->h) + p(h->j) over common neighbors h of the two
    depth-truncated neighborhoods; denominator sums p(i->h) over i's
    neighborhood plus p(h->j) over j's.  p(h->j) is read from h's own row and
    is 0 when j is not among h's neighbors.
    """
    g = table.graph
    if g is None:
        raise ValueError("pairwise scores need a graph-backed table")
    norm = table.norm
    pos = table.position_maps()
    nbr_i = g.neighbors[i]
    nbr_j = g.neighbors[j]
    pos_j = pos[j]
    sentinel = depth
    num = 0.0
    den_i = 0.0
    for slot in range(depth):
        h = int(nbr_i[slot])
        p_ih = norm[i, slot]
        den_i += p_ih
        if pos_j.get(h, sentinel) < depth:
            slot_j = pos[h].get(j)
            p_hj = 0.0 if slot_j is None else norm[h, slot_j]
            num += p_ih + p_hj
    den_j = 0.0
    for slot in range(depth):
        h = int(nbr_j[slot])
        slot_j = pos[h].get(j)
        if slot_j is not None:
            den_j += norm[h, slot_j]
    # mathematically in [0, 1]; clamp the few ulp of summation-order noise
    return min(max(num / (den_i + den_j), 0.0), 1.0)


def edge_prob_weighted(table: EdgeProbTable, i: int, j: int) -> float:
    """Probability-weighted neighbor-overlap score over full K neighborhoods."""
    return _pair_score(table, int(i), int(j), table.k)


def edge_prob_topk(table: EdgeProbTable, khat, i: int, j: int) -> float:
    """Overlap score with all neighborhoods truncated to the anchor's depth.

    Both neighborhoods and their intersection truncate to ``khat[i]``, i's
    depth; with ``khat`` identically K this is exactly
    :func:`edge_prob_weighted`.
    """
    arr = _khat_array(khat, table.n, table.k)
    return _pair_score(table, int(i), int(j), int(arr[int(i)]))


def refine_graph(g: KnnGraph, table: EdgeProbTable, khat):
    """Score every truncated-neighborhood pair and deduplicate directions.

    Returns a list of ``(i, j, prob)`` with i < j, one entry per unordered
    pair where j appears among i's first khat[i] neighbors (or vice versa);
    when both directions exist the larger score wins.  Sorted by (i, j).
    """
    arr = _khat_array(khat, g.n, g.k)
    best: dict[tuple[int, int], float] = {}
    for i in range(g.n):
        depth = int(arr[i])
        row = g.neighbors[i]
        for slot in range(1, depth):
            j = int(row[slot])
            p = _pair_score(table, i, j, depth)
            key = (i, j) if i < j else (j, i)
            cur = best.get(key)
            if cur is None or p > cur:
                best[key] = p
    return [(i, j, best[(i, j)]) for (i, j) in sorted(best)]


def write_edge_csv(edges, path) -> None:
    """Write a refined edge list as ``src,dst,prob`` with 9 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src", "dst", "prob"])
        for i, j, p in edges:
            writer.writerow([i, j, format(p, ".9g")])


def read_edge_csv(path):
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst", "prob"]:
            raise ValueError(f"unexpected edge CSV header: {header}")
        for row in reader:
            if not row:
                continue
            edges.append((int(row[0]), int(row[1]), float(row[2])))
    return edges
