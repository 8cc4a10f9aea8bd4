"""One-shot relational learning on temporal knowledge graphs (MOST).

Dataset construction, a small reverse-mode autodiff library, the model,
episodic training and filtered link-prediction evaluation, all on numpy.
"""

__version__ = "0.1.0"

from .core import (
    EXTRAPOLATION,
    INTERPOLATION,
    BackgroundGraph,
    NeighborSample,
    Quadruple,
    TemporalNeighborIndex,
    Vocab,
    add_reciprocals,
    build_neighbor_index,
    ingest_raw,
    read_quadruples,
    sample_neighbors,
)
from .dataset import MetaDataset, MetaTask, build_dataset, emit_dataset, load_dataset
from .evaluator import FilterIndex, MetricsReport, RankOutcome, compute_metrics, evaluate, filtered_rank, make_queries
from .model import (
    MOST,
    HyperConfig,
    LPQuery,
    ModelParams,
    encode_time,
    init_params,
    load_checkpoint,
    norm_regularize,
    save_checkpoint,
)
from .trainer import TrainState, train, train_episode

__all__ = [
    "EXTRAPOLATION", "INTERPOLATION", "BackgroundGraph", "NeighborSample", "Quadruple",
    "TemporalNeighborIndex", "Vocab", "add_reciprocals", "build_neighbor_index", "ingest_raw",
    "read_quadruples", "sample_neighbors", "MetaDataset", "MetaTask", "build_dataset", "emit_dataset",
    "load_dataset", "FilterIndex", "MetricsReport", "RankOutcome", "compute_metrics", "evaluate",
    "filtered_rank", "make_queries", "MOST", "HyperConfig", "LPQuery", "ModelParams", "encode_time",
    "init_params", "load_checkpoint", "norm_regularize", "save_checkpoint", "TrainState", "train",
    "train_episode",
]
