"""BM3: bootstrapped multi-modal recommendation with a numpy backend."""

from .data import (
    DataError,
    FeatureMatrix,
    InteractionDataset,
    InteractionRecord,
    SplitDataset,
    build_dataset,
    kcore_filter,
    load_feature_matrix,
    load_interactions,
    sparsity,
    split_per_user,
    write_feature_matrix,
)
from .evaluator import EvalConfig, MetricsReport, evaluate, ndcg_at_k, recall_at_k
from .graph import build_adjacency, propagate
from .loss import LossBreakdown, LossConfig, total_loss
from .model import ForwardState, ModelParams, backward, forward, score_all
from .trainer import TrainConfig, TrainReport, run_ablation, run_grid, train

__version__ = "0.1.0"
