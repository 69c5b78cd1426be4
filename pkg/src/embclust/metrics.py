"""Clustering evaluation: pairwise F-score, BCubed F-score, NMI.

All three are invariant to cluster-id relabeling of either argument.  Pair
counts accumulate in Python integers, so quadratic totals never overflow.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np


def _as_partitions(pred, truth):
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.ndim != 1 or p.shape != t.shape:
        raise ValueError(f"partition length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("partitions must be nonempty")
    return [int(x) for x in p], [int(x) for x in t]


def _f1(p, r):
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def pairwise_f(pred, truth):
    """Precision/recall/F over all unordered node pairs.

    A positive is "same cluster".  With no predicted positive pairs the
    precision is 1 by convention (and symmetrically for recall), so singleton
    predictions score f = 0 through recall rather than NaN.
    """
    p, t = _as_partitions(pred, truth)
    cells = Counter(zip(p, t))
    pred_sizes = Counter(p)
    truth_sizes = Counter(t)
    tp = sum(c * (c - 1) // 2 for c in cells.values())
    pred_pos = sum(c * (c - 1) // 2 for c in pred_sizes.values())
    true_pos = sum(c * (c - 1) // 2 for c in truth_sizes.values())
    prec = tp / pred_pos if pred_pos else 1.0
    rec = tp / true_pos if true_pos else 1.0
    return prec, rec, _f1(prec, rec)


def bcubed_f(pred, truth):
    """Per-node precision/recall averaged over nodes, then combined."""
    p, t = _as_partitions(pred, truth)
    n = len(p)
    cells = Counter(zip(p, t))
    pred_sizes = Counter(p)
    truth_sizes = Counter(t)
    prec = 0.0
    rec = 0.0
    for (cp, ct), c in cells.items():
        prec += c * c / pred_sizes[cp]
        rec += c * c / truth_sizes[ct]
    prec /= n
    rec /= n
    return prec, rec, _f1(prec, rec)


def _same_partition(p, t):
    fwd = {}
    bwd = {}
    for a, b in zip(p, t):
        if fwd.setdefault(a, b) != b or bwd.setdefault(b, a) != a:
            return False
    return True


def nmi(pred, truth) -> float:
    """Mutual information normalized by the geometric mean of the entropies.

    1 for identical partitions up to relabeling (including two single-cluster
    or two all-singleton partitions); 0 when either entropy is zero and the
    partitions differ.
    """
    p, t = _as_partitions(pred, truth)
    if _same_partition(p, t):
        return 1.0
    n = len(p)
    cells = Counter(zip(p, t))
    pred_sizes = Counter(p)
    truth_sizes = Counter(t)
    hp = -sum((c / n) * math.log(c / n) for c in pred_sizes.values())
    ht = -sum((c / n) * math.log(c / n) for c in truth_sizes.values())
    if hp == 0.0 or ht == 0.0:
        return 0.0
    mi = 0.0
    for (cp, ct), c in cells.items():
        mi += (c / n) * math.log(c * n / (pred_sizes[cp] * truth_sizes[ct]))
    mi = max(mi, 0.0)
    return min(mi / math.sqrt(hp * ht), 1.0)


@dataclass(frozen=True)
class MetricsReport:
    pairwise: tuple
    bcubed: tuple
    nmi: float

    def as_dict(self):
        pp, pr, pf = self.pairwise
        bp, br, bf = self.bcubed
        return {
            "pairwise": {"p": round(pp, 6), "r": round(pr, 6), "f": round(pf, 6)},
            "bcubed": {"p": round(bp, 6), "r": round(br, 6), "f": round(bf, 6)},
            "nmi": round(self.nmi, 6),
        }

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


def compute_all(pred, truth) -> MetricsReport:
    return MetricsReport(
        pairwise=pairwise_f(pred, truth),
        bcubed=bcubed_f(pred, truth),
        nmi=nmi(pred, truth),
    )
