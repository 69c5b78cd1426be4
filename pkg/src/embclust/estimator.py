"""Scikit-learn style front end for the clustering pipeline.

``TopKJaccardClusterer`` wraps the full pipeline behind the standard
``fit`` / ``fit_predict`` / ``get_params`` surface so it drops into sklearn
tooling (grid search, pipelines) like any other clusterer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .embeddings import EmbeddingSet
from .pipeline import PipelineConfig, PredictorConfig, run_pipeline
from .edges import TransformConfig
from .predictor import TrainConfig


class TopKJaccardClusterer(ClusterMixin, BaseEstimator):
    """Cluster embedding vectors through a refined kNN-graph pipeline.

    The estimator builds an exact cosine kNN graph, converts neighbor
    distances into row-normalized edge probabilities, refines pairwise links
    with truncated neighbor-overlap scores, and partitions the resulting
    weighted graph (map equation by default).

    When ``fit`` receives identity labels ``y``, a small attention encoder is
    trained to predict each node's true-neighbor count and the overlap scores
    truncate accordingly; without labels, full-width neighborhoods are used.

    Parameters
    ----------
    n_neighbors : int, default=40
        Neighbor list length K for the kNN graph.
    transform : {"sigmoid", "exp"}, default="sigmoid"
        Distance-to-probability transform.
    delta, epsilon : float
        Sigmoid steepness and offset.
    tau : float, default=0.25
        Temperature of the exponential transform.
    eta : float, default=0.9
        Score threshold when ``threshold_mode`` is not "none".
    threshold_mode : {"none", "prob", "pair"}, default="none"
        Edge filtering before partitioning: none, refined probability at
        least ``eta``, or trained pair-scorer output at least ``eta``.
    cluster_method : {"map", "components"}, default="map"
    attention : {"vanilla", "diff", "sdt", "moe-sdt"}, default="diff"
        Attention variant inside the boundary predictor.
    layers, heads, hidden_dim : int
        Encoder geometry for the predictor.
    epochs, lr, momentum, weight_decay : training hyperparameters.
    random_state : int, default=0

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster ids, dense from 0.
    report_ : MetricsReport or None
        Metrics against ``y`` when labels were given.
    """

    def __init__(self, n_neighbors=40, transform="sigmoid", delta=7.5,
                 epsilon=-5.0, tau=0.25, eta=0.9, threshold_mode="none",
                 cluster_method="map", attention="diff", layers=2, heads=2,
                 hidden_dim=32, epochs=8, lr=1e-2, momentum=0.9,
                 weight_decay=1e-4, random_state=0):
        self.n_neighbors = n_neighbors
        self.transform = transform
        self.delta = delta
        self.epsilon = epsilon
        self.tau = tau
        self.eta = eta
        self.threshold_mode = threshold_mode
        self.cluster_method = cluster_method
        self.attention = attention
        self.layers = layers
        self.heads = heads
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _config(self, supervised):
        return PipelineConfig(
            k=self.n_neighbors,
            transform=TransformConfig(kind=self.transform, tau=self.tau,
                                      delta=self.delta, epsilon=self.epsilon),
            eta=self.eta,
            threshold_mode=self.threshold_mode,
            cluster_method=self.cluster_method,
            use_topk=supervised,
            predictor=PredictorConfig(layers=self.layers, heads=self.heads,
                                      dim=self.hidden_dim, variant=self.attention),
            train=TrainConfig(lr=self.lr, momentum=self.momentum,
                              weight_decay=self.weight_decay, epochs=self.epochs),
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Cluster the rows of X; identity labels ``y`` enable the predictor."""
        X = check_array(X, dtype=np.float64, ensure_min_samples=1,
                        ensure_min_features=2)
        if self.n_neighbors > X.shape[0]:
            raise ValueError(
                f"n_neighbors={self.n_neighbors} exceeds the {X.shape[0]} samples"
            )
        labels = None
        if y is not None:
            labels = np.asarray(y, dtype=np.int32)
            if labels.shape != (X.shape[0],):
                raise ValueError("y must be one integer label per row of X")
        emb = EmbeddingSet(rows=X, labels=labels)
        result = run_pipeline(self._config(supervised=labels is not None), emb)
        self.labels_ = result.assignment
        self.report_ = result.report
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X, y).labels_
