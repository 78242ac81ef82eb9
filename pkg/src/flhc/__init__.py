"""Federated averaging with a one-shot hierarchical clustering step.

Clients train locally and a server aggregates their parameters; after a few
warm-up rounds the server clusters clients by the similarity of their update
vectors and trains one specialised model per cluster.
"""

from .clustering import (
    ClusterAssignment,
    ClusteringConfig,
    Dendrogram,
    build_dendrogram,
    cut_by_threshold,
    pairwise_distance,
)
from .data import (
    ClientDataset,
    LabelledDataset,
    PartitionScheme,
    load_idx,
    load_prepartitioned,
    partition,
    partition_iid,
    partition_label_swapped,
    partition_pathological,
)
from .experiment import ExperimentConfig, ExperimentResult, collect_deltas, evaluate, run_experiment
from .fedavg import RoundResult, TrainingHyperparams, aggregate, client_update, run_round, sample_clients
from .metrics import ComparisonReport, RoundMetrics, compare, read_csv, write_csv
from .model import FAST_MLP, PAPER_CNN, Model, ModelSpec, ParameterVector

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment",
    "ClusteringConfig",
    "Dendrogram",
    "build_dendrogram",
    "cut_by_threshold",
    "pairwise_distance",
    "ClientDataset",
    "LabelledDataset",
    "PartitionScheme",
    "load_idx",
    "load_prepartitioned",
    "partition",
    "partition_iid",
    "partition_label_swapped",
    "partition_pathological",
    "ExperimentConfig",
    "ExperimentResult",
    "collect_deltas",
    "evaluate",
    "run_experiment",
    "RoundResult",
    "TrainingHyperparams",
    "aggregate",
    "client_update",
    "run_round",
    "sample_clients",
    "ComparisonReport",
    "RoundMetrics",
    "compare",
    "read_csv",
    "write_csv",
    "FAST_MLP",
    "PAPER_CNN",
    "Model",
    "ModelSpec",
    "ParameterVector",
    "__version__",
]
