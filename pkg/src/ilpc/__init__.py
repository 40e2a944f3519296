"""Iterative label propagation and cleaning for few-shot classification.

Given precomputed feature embeddings, labels spread over a k-NN affinity
graph, get balanced over classes by Sinkhorn projection, and the most
trustworthy pseudo-labels (lowest average training loss of a small linear
head) migrate into the support set until every query is decided.
"""

from .balance import (
    BalanceConfig,
    balance_and_predict,
    confidence_weights,
    extract_unlabeled_block,
    power_transform,
    predict_pseudo_labels,
    sinkhorn,
)
from .cleaner import CleanerConfig, CleaningReport, augment, select_cleanest, train_and_score
from .engine import (
    VARIANTS,
    InferenceResult,
    PipelineConfig,
    inductive_baseline,
    semi_supervised,
    transduce,
)
from .episodes import Episode, EpisodeSpec, sample_episode, save_episode, true_prior
from .errors import (
    EpisodeSamplingError,
    FormatError,
    ILPCError,
    InfeasibleMarginalsError,
    PreprocessError,
    SolverError,
    TrainingError,
)
from .evaluation import (
    BenchmarkResult,
    BenchmarkSpec,
    ablation_grid,
    loss_histogram_experiment,
    run_benchmark,
)
from .features import (
    BlobSpec,
    FeatureSet,
    PreprocessSpec,
    generate_blobs,
    load_features,
    preprocess,
    save_features,
)
from .graph import AffinityGraph, GraphConfig, build_graph
from .propagation import PropagationConfig, make_label_matrix, propagate

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph",
    "BalanceConfig",
    "BenchmarkResult",
    "BenchmarkSpec",
    "BlobSpec",
    "CleanerConfig",
    "CleaningReport",
    "Episode",
    "EpisodeSamplingError",
    "EpisodeSpec",
    "FeatureSet",
    "FormatError",
    "GraphConfig",
    "ILPCError",
    "InfeasibleMarginalsError",
    "InferenceResult",
    "PipelineConfig",
    "PreprocessError",
    "PreprocessSpec",
    "PropagationConfig",
    "SolverError",
    "TrainingError",
    "VARIANTS",
    "ablation_grid",
    "augment",
    "balance_and_predict",
    "build_graph",
    "confidence_weights",
    "extract_unlabeled_block",
    "generate_blobs",
    "inductive_baseline",
    "load_features",
    "loss_histogram_experiment",
    "make_label_matrix",
    "power_transform",
    "predict_pseudo_labels",
    "preprocess",
    "propagate",
    "run_benchmark",
    "sample_episode",
    "save_episode",
    "save_features",
    "select_cleanest",
    "semi_supervised",
    "sinkhorn",
    "train_and_score",
    "transduce",
    "true_prior",
]
