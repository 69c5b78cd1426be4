import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("suite", max_examples=40, deadline=None)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


@pytest.fixture
def small_graph(rng):
    """A 5-node graph with K=3 for hand-checkable pairwise scores."""
    from embclust.embeddings import EmbeddingSet
    from embclust.knn import build_knn

    rows = random_unit_rows(rng, 5, 6)
    emb = EmbeddingSet(rows=rows, normalized=True)
    return build_knn(emb, 3)
