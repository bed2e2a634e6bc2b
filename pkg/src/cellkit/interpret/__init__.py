"""Classifier stand-in, gradient saliency and Welch marker ranking."""
from .classifier import (
    ClassifierConfig,
    ClassifierParams,
    ClassifierTrainResult,
    cross_entropy,
    dataset_inputs,
    init_classifier,
    logits,
    predict,
    predict_batch,
    predict_proba,
    train_classifier,
    vanilla_gradient,
)
from .markers import MarkerRow, MarkerTable, WelchResult, rank_markers, welch_arrays, welch_t
from .saliency import SaliencyResult, aggregate_top_genes, gene_mask, saliency_scores
