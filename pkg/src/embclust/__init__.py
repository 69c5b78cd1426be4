"""Graph-based clustering of embedding vectors.

Pipeline: exact cosine kNN graph -> sigmoid/exponential distance transform
-> row-normalized edge probabilities -> truncated neighbor-overlap edge
refinement driven by a learned per-node neighbor count -> map-equation (or
connected-component) partitioning -> pairwise / BCubed / NMI evaluation.
"""

from .embeddings import (EmbeddingSet, SyntheticSpec, generate_synthetic,
                         l2_normalize, load, save)
from .knn import KnnGraph, build_knn, cosine_similarity, inject_noise
from .edges import (EdgeProbTable, TopKVector, TransformConfig,
                    build_edge_table, dist_from_sim, edge_prob_topk,
                    edge_prob_weighted, jaccard_basic, normalize_probs,
                    prob_exp, prob_sigmoid, refine_graph, round_topk)
from .attention import (AttentionParams, diff_attention, grad_check,
                        init_attention_params, lambda_value, moe_sdt_attention,
                        project_qkv, softmax_rows, sparse_diff_attention,
                        topk_mask, vanilla_attention)
from .encoder import EncoderConfig, encoder_forward, init_encoder_params
from .predictor import (BoundaryModel, NeighborSequence, PairModel,
                        PairScoreThreshold, TrainConfig, encode_sequence,
                        label_topk, predict_pair_score, predict_topk, train)
from .clustering import (WeightedGraph, connected_components, map_cluster,
                         map_codelength, threshold_edges)
from .metrics import MetricsReport, bcubed_f, compute_all, nmi, pairwise_f
from .pipeline import PipelineConfig, PredictorConfig, run_pipeline
from .estimator import TopKJaccardClusterer

__version__ = "0.1.0"
