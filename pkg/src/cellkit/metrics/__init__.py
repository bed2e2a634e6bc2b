"""Evaluation metrics for generated and predicted cells."""
from .classification import UNANSWERED, ClassificationMetrics, classification_metrics
from .knn import (
    K_SWEEP,
    delta_sknn,
    kernel_matrix,
    knn_vote,
    median_bandwidth,
    mmd,
    mmd_gammas,
    pairwise_sqdist,
    pknn,
    sknn,
)
from .pca import Embedding, PcaModel, pca_fit, pca_transform
from .report import EvalReport, embed_pair, evaluate, evaluate_embeddings
