"""Final partitioning: edge thresholding, connected components, map equation.

The map equation scores a partition by the expected description length (in
bits) of a random walk on the weighted graph under a two-level codebook: one
index codebook across modules plus one codebook per module.  Flow is
undirected: node visit rates are proportional to weighted degree and module
exit rates to cut weight.  A greedy single-node-move optimizer (deterministic
ascending node order) minimizes the codelength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted graph: n nodes, parallel src/dst/weight arrays.

    No self-loops, no duplicate unordered pairs, weights finite and positive.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        w = np.asarray(self.weight, dtype=np.float64)
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise ValueError("src/dst/weight must be parallel 1d arrays")
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if src.size:
            if np.any(src < 0) or np.any(src >= self.n) or np.any(dst < 0) or np.any(dst >= self.n):
                raise ValueError("edge endpoint out of range")
            if np.any(src == dst):
                raise ValueError("self-loops are not allowed")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be finite and positive")
            keys = set()
            for a, b in zip(src.tolist(), dst.tolist()):
                key = (a, b) if a < b else (b, a)
                if key in keys:
                    raise ValueError(f"duplicate edge {key}")
                keys.add(key)
        object.__setattr__(self, "src", _frozen(src))
        object.__setattr__(self, "dst", _frozen(dst))
        object.__setattr__(self, "weight", _frozen(w))

    @property
    def edge_count(self):
        return self.src.shape[0]

    def degrees(self):
        deg = np.zeros(self.n)
        np.add.at(deg, self.src, self.weight)
        np.add.at(deg, self.dst, self.weight)
        return deg

    def adjacency(self):
        """List of (neighbor_array, weight_array) per node."""
        nbrs = [[] for _ in range(self.n)]
        wts = [[] for _ in range(self.n)]
        for a, b, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            nbrs[a].append(b)
            wts[a].append(w)
            nbrs[b].append(a)
            wts[b].append(w)
        return [
            (np.asarray(nb, dtype=np.int64), np.asarray(wt, dtype=np.float64))
            for nb, wt in zip(nbrs, wts)
        ]


def threshold_edges(edges, eta: float, n: int | None = None) -> WeightedGraph:
    """Keep edges with probability >= eta, deduplicating by the larger score.

    ``edges`` is an iterable of (i, j, p) with p in [0, 1].  Zero-probability
    edges carry no flow and are dropped regardless of eta.  ``n`` fixes the
    node count (so isolated nodes survive); defaults to max id + 1.
    """
    best: dict[tuple[int, int], float] = {}
    max_node = -1
    for i, j, p in edges:
        i, j = int(i), int(j)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"edge probability {p} outside [0, 1]")
        max_node = max(max_node, i, j)
        if i == j:
            continue
        key = (i, j) if i < j else (j, i)
        cur = best.get(key)
        if cur is None or p > cur:
            best[key] = p
    if n is None:
        n = max_node + 1
    if n < 1:
        raise ValueError("cannot infer node count from an empty edge list")
    kept = [(i, j, p) for (i, j), p in sorted(best.items()) if p >= eta and p > 0.0]
    src = np.asarray([e[0] for e in kept], dtype=np.int64)
    dst = np.asarray([e[1] for e in kept], dtype=np.int64)
    w = np.asarray([e[2] for e in kept], dtype=np.float64)
    return WeightedGraph(n=n, src=src, dst=dst, weight=w)


def _relabel_dense(assign):
    """Renumber module ids densely, ordered by each module's smallest node."""
    out = np.empty(len(assign), dtype=np.int64)
    mapping = {}
    for node, m in enumerate(assign):
        mid = mapping.setdefault(int(m), len(mapping))
        out[node] = mid
    return out


def connected_components(g: WeightedGraph) -> np.ndarray:
    """Undirected components; ids dense, ordered by smallest contained node."""
    parent = list(range(g.n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in zip(g.src.tolist(), g.dst.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return _relabel_dense([find(x) for x in range(g.n)])


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0.0 else 0.0


def _flow(g: WeightedGraph):
    deg = g.degrees()
    two_w = float(deg.sum())
    if two_w <= 0.0:
        raise ValueError("map equation undefined on a graph with no positive-weight edges")
    return deg / two_w, two_w


def map_codelength(g: WeightedGraph, partition) -> float:
    """Two-level map equation codelength, in bits.

    L = plogp(q) - 2 sum_m plogp(q_m) + sum_m plogp(q_m + p_m) - sum_i plogp(p_i)
    with p_i the visit rates (weighted degree over total) and q_m the module
    exit rates (cut weight over total).  A single all-in-one module gives the
    entropy of the visit-rate distribution.
    """
    part = np.asarray(partition)
    if part.shape != (g.n,):
        raise ValueError(f"partition must assign all {g.n} nodes")
    p, two_w = _flow(g)
    _, inv = np.unique(part, return_inverse=True)
    m = int(inv.max()) + 1
    p_in = np.bincount(inv, weights=p, minlength=m)
    cut = np.zeros(m)
    for a, b, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()):
        ma, mb = inv[a], inv[b]
        if ma != mb:
            cut[ma] += w / two_w
            cut[mb] += w / two_w
    q_tot = float(cut.sum())
    length = _plogp(q_tot)
    length -= 2.0 * sum(_plogp(float(x)) for x in cut)
    length += sum(_plogp(float(qm + pm)) for qm, pm in zip(cut, p_in))
    length -= sum(_plogp(float(x)) for x in p)
    return float(length)


_IMPROVEMENT_EPS = 1e-12
_SMALL_COMPONENT = 32
_MAX_SWEEPS = 200


class _MoveState:
    """Incremental module statistics for greedy codelength descent.

    Module ids live in [0, 2n): ids above the initial range serve as fresh
    singleton targets, handed out from a lazy free stack.  Stats arrays hold
    per-module visit mass (p_in), exit mass (cut) and member count (size).
    """

    def __init__(self, g: WeightedGraph, assign):
        self.g = g
        self.p, _ = _flow(g)
        self.two_w = float(g.degrees().sum())
        self.adj = g.adjacency()
        self.assign = np.array(assign, dtype=np.int64)
        n = g.n
        cap = 2 * n
        self.p_in = np.zeros(cap)
        self.cut = np.zeros(cap)
        self.size = np.zeros(cap, dtype=np.int64)
        np.add.at(self.p_in, self.assign, self.p)
        np.add.at(self.size, self.assign, 1)
        for a, b, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()):
            ma, mb = self.assign[a], self.assign[b]
            if ma != mb:
                self.cut[ma] += w / self.two_w
                self.cut[mb] += w / self.two_w
        self.q_tot = float(self.cut.sum())
        self.free = list(range(cap - 1, n - 1, -1))

    def fresh_id(self) -> int:
        while self.free and self.size[self.free[-1]] != 0:
            self.free.pop()
        return self.free[-1]

    def neighbor_weights(self, i):
        """Probability-mass weight from node i into each adjacent module."""
        out: dict[int, float] = {}
        nbrs, wts = self.adj[i]
        for j, w in zip(nbrs.tolist(), wts.tolist()):
            m = int(self.assign[j])
            out[m] = out.get(m, 0.0) + w / self.two_w
        return out

    def move_delta(self, i, target, w_to) -> float:
        """Codelength change from moving node i to module ``target``."""
        cur = int(self.assign[i])
        if target == cur:
            return 0.0
        p_i = float(self.p[i])
        w_cur = w_to.get(cur, 0.0)
        w_tgt = w_to.get(target, 0.0)
        q_a, pin_a = float(self.cut[cur]), float(self.p_in[cur])
        q_b, pin_b = float(self.cut[target]), float(self.p_in[target])
        q_a2 = q_a - p_i + 2.0 * w_cur
        q_b2 = q_b + p_i - 2.0 * w_tgt
        q_tot2 = self.q_tot - q_a - q_b + q_a2 + q_b2
        delta = _plogp(q_tot2) - _plogp(self.q_tot)
        delta -= 2.0 * (_plogp(q_a2) + _plogp(q_b2) - _plogp(q_a) - _plogp(q_b))
        delta += _plogp(q_a2 + pin_a - p_i) + _plogp(q_b2 + pin_b + p_i)
        delta -= _plogp(q_a + pin_a) + _plogp(q_b + pin_b)
        return delta

    def apply(self, i, target, w_to) -> None:
        cur = int(self.assign[i])
        p_i = float(self.p[i])
        w_cur = w_to.get(cur, 0.0)
        w_tgt = w_to.get(target, 0.0)
        q_a2 = self.cut[cur] - p_i + 2.0 * w_cur
        q_b2 = self.cut[target] + p_i - 2.0 * w_tgt
        self.q_tot += q_a2 + q_b2 - self.cut[cur] - self.cut[target]
        self.cut[cur] = q_a2
        self.cut[target] = q_b2
        self.p_in[cur] -= p_i
        self.p_in[target] += p_i
        self.size[cur] -= 1
        self.size[target] += 1
        self.assign[i] = target
        if self.size[cur] == 0:
            # kill float drift in emptied modules and recycle the id
            self.q_tot -= self.cut[cur]
            self.cut[cur] = 0.0
            self.p_in[cur] = 0.0
            self.free.append(cur)


def _greedy(g: WeightedGraph, assign, components):
    """Sweep best single-node moves until no move lowers the codelength."""
    state = _MoveState(g, assign)
    comp_nodes: dict[int, list[int]] = {}
    for node, c in enumerate(components.tolist()):
        comp_nodes.setdefault(c, []).append(node)
    for _ in range(_MAX_SWEEPS):
        moved = False
        for i in range(g.n):
            w_to = state.neighbor_weights(i)
            cur = int(state.assign[i])
            candidates = set(w_to)
            nodes_here = comp_nodes[int(components[i])]
            if len(nodes_here) <= _SMALL_COMPONENT:
                candidates.update(int(state.assign[v]) for v in nodes_here)
            candidates.discard(cur)
            if state.size[cur] > 1:
                candidates.add(state.fresh_id())
            if not candidates:
                continue
            best_target = None
            best_delta = -_IMPROVEMENT_EPS
            for target in sorted(candidates):
                delta = state.move_delta(i, target, w_to)
                if delta < best_delta:
                    best_delta = delta
                    best_target = target
            if best_target is not None:
                state.apply(i, best_target, w_to)
                moved = True
        if not moved:
            break
    return state.assign


def map_cluster(g: WeightedGraph) -> np.ndarray:
    """Greedy two-level map-equation clustering.

    Starts from singletons and repeatedly applies the best codelength-reducing
    single-node move (ascending node order, ties to the smallest module id)
    until no move improves by more than 1e-12.  The result never codes worse
    than the all-singletons or the one-module partition; if the single module
    would be shorter, descent restarts from there.  Ids are dense, ordered by
    each module's smallest node.
    """
    if g.edge_count == 0:
        return np.arange(g.n, dtype=np.int64)
    components = connected_components(g)
    result = _greedy(g, np.arange(g.n), components)
    length = map_codelength(g, result)
    one_module = np.zeros(g.n, dtype=np.int64)
    if map_codelength(g, one_module) < length - _IMPROVEMENT_EPS:
        alt = _greedy(g, one_module, components)
        if map_codelength(g, alt) < length:
            result = alt
    return _relabel_dense(result.tolist())
