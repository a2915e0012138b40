"""Comprehensive personalized ranking from one-bit user-user and item-item comparisons."""

__version__ = "0.1.0"

from .comparisons import (
    ComparisonSet,
    CycleError,
    RatingMatrix,
    extract_comparisons,
    load_comparisons,
    store_comparisons,
    transitive_closure,
)
from .model import (
    Hyperparams,
    ModelParams,
    cpr_objective,
    link,
    pairwise_score_item,
    pairwise_score_user,
    recover_matrix,
    score,
)
from .optim import StoppingRule, TrainReport, accumulate_gradient, grad_log_link, init_params, train
from .baselines import KnnConfig, knn_complete, svd_complete
from .evaluation import (
    MetricSeries,
    count_mismatches,
    detect_knee,
    normalize_series,
    rank_sweep,
    singular_diagnostics,
)
