"""Unsupervised coreset selection via contrastive cosine-similarity scores."""

from .augment import AugmentConfig, ViewPair, make_views
from .baselines import CenterSet, ForgettingTable, forgetting_update, kcenters_greedy, random_subset
from .config import RunConfig, build_datasets
from .contrastive import (
    ContrastiveBatchResult,
    NegativeQueue,
    cossim,
    moco_loss,
    ntxent_loss,
    queue_push,
)
from .data import Dataset, Example, SyntheticSpec, load_cifar_binary, load_idx, make_synthetic, normalize
from .evaluation import (
    ClassifierConfig,
    EvalReport,
    consistency,
    cossim_stats,
    cross_test,
    imbalance,
    stride_experiment,
    train_classifier,
)
from .numerics import (
    EncoderDims,
    EncoderParams,
    OptimizerState,
    backward,
    forward,
    init_encoder,
    momentum_update,
    sgd_step,
)
from .scoring import CoresetRanking, ScoreTable, accumulate, mean_cossim, rank, select
from .training import TrainSettings, train_and_score

__version__ = "0.1.0"
