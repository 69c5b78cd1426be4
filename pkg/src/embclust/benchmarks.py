"""Bundled synthetic benchmarks for tests, ablations, and robustness runs.

Each generator is a pure function of its seed.  Sizes are chosen so every
benchmark finishes in seconds on one core.
"""

from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingSet, SyntheticSpec, generate_synthetic


def well_separated(seed: int = 7) -> EmbeddingSet:
    """20 clusters x 50 points in 64 dims, spread 0.15: nearly pure kNN rows."""
    return generate_synthetic(
        SyntheticSpec(num_clusters=20, points_per_cluster=50, dim=64,
                      intra_spread=0.15, seed=seed)
    )


def overlapping(seed: int = 11) -> EmbeddingSet:
    """Paired clusters with close centers plus between-cluster distractors.

    Five super-directions each spawn two sibling clusters whose centers sit
    at a small angle, so borderline pairs fall where the sigmoid transform
    separates harder than the exponential.  Clusters hold 24 points against
    the usual K=40 neighbor lists, leaving a tail of irrelevant slots;
    distractor points (one singleton label each, 8 per sibling pair) sit
    midway between sibling centers and leak into those tails, which
    truncated overlap scores are built to cut.
    """
    rng = np.random.default_rng(seed)
    dim = 32
    per_cluster = 24
    supers = rng.standard_normal((5, dim))
    supers /= np.linalg.norm(supers, axis=1, keepdims=True)
    rows = []
    labels = []
    centers = []
    label = 0
    for s in supers:
        for _ in range(2):
            tilt = 0.55 * rng.standard_normal(dim)
            center = s + tilt
            center /= np.linalg.norm(center)
            centers.append(center)
            pts = center + 0.28 * rng.standard_normal((per_cluster, dim))
            pts /= np.linalg.norm(pts, axis=1, keepdims=True)
            rows.append(pts)
            labels.extend([label] * per_cluster)
            label += 1
    # distractors: midpoints of sibling centers, lightly perturbed
    for pair in range(5):
        a, b = centers[2 * pair], centers[2 * pair + 1]
        for _ in range(8):
            mid = a + b + 0.22 * rng.standard_normal(dim)
            mid /= np.linalg.norm(mid)
            rows.append(mid[None, :])
            labels.append(label)
            label += 1
    return EmbeddingSet(
        rows=np.vstack(rows),
        labels=np.asarray(labels, dtype=np.int32),
        normalized=True,
    )


def boundary_at_30(seed: int = 23) -> EmbeddingSet:
    """Clusters of exactly 30 points, so the prefix-F1 boundary sits at 30.

    Four clusters give 120 nodes, enough to build K = 80 neighbor lists while
    keeping every node's true neighbor count at 30.
    """
    return generate_synthetic(
        SyntheticSpec(num_clusters=4, points_per_cluster=30, dim=32,
                      intra_spread=0.12, seed=seed)
    )


def noise_benchmark(seed: int = 19) -> EmbeddingSet:
    """Moderately separated clusters for the noise-injection experiment.

    Sized so the pair-relationship task is easy on clean graphs; injected
    similarity noise is then the dominant difficulty, which is what the
    vanilla/differential attention comparison needs to isolate.
    """
    return generate_synthetic(
        SyntheticSpec(num_clusters=10, points_per_cluster=20, dim=32,
                      intra_spread=0.26, seed=seed)
    )


BENCHMARKS = {
    "well-separated": well_separated,
    "overlapping": overlapping,
    "boundary-at-30": boundary_at_30,
    "noise": noise_benchmark,
}


def get_benchmark(name: str, seed=None) -> EmbeddingSet:
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; have {sorted(BENCHMARKS)}")
    fn = BENCHMARKS[name]
    return fn() if seed is None else fn(seed)
