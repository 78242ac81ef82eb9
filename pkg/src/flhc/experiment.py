"""End-to-end experiment orchestration.

A run is: n warm-up rounds of plain federated averaging on one global model,
then (unless baseline_mode) one full-participation local pass whose parameter
deltas feed the agglomerative clustering, a threshold cut, and from round n+1
on one federated round per cluster per round with every cluster starting from
the shared pre-cluster model. Metrics are recorded after every round, so the
row at round n+1 is the measurement directly after the clustering step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .clustering import ClusteringConfig, Dendrogram, build_dendrogram, cut_by_threshold
from .data import ClientDataset, PartitionScheme
from .fedavg import TrainingHyperparams, client_update, delta_seed, init_seed, run_round
from .metrics import ClusterStats, RoundMetrics
from .model import Model, ModelSpec, ParameterVector


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; validated before any training starts."""

    partition: PartitionScheme
    model: ModelSpec
    hp: TrainingHyperparams
    rounds_before_cluster: int
    clustering: ClusteringConfig | None = None
    total_rounds: int = 50
    target_accuracy: float = 0.99
    baseline_mode: bool = False
    experiment_seed: int = 0
    weight_by_samples: bool = False

    def __post_init__(self) -> None:
        if self.rounds_before_cluster < 0:
            raise ValueError("rounds_before_cluster must be non-negative")
        if not self.rounds_before_cluster < self.total_rounds:
            raise ValueError("rounds_before_cluster must be below total_rounds")
        if not 0 < self.target_accuracy <= 1:
            raise ValueError("target_accuracy must be in (0, 1]")
        if self.experiment_seed < 0:
            raise ValueError("experiment_seed must be non-negative")
        if not self.baseline_mode and self.clustering is None:
            raise ValueError("a clustering config is required unless baseline_mode is set")


@dataclass
class ClusterState:
    """Flat clustering over client ids plus each cluster's current model."""

    clusters: tuple[tuple[int, ...], ...]
    params: dict[int, ParameterVector]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rounds: list[RoundMetrics]
    dendrogram: Dendrogram | None = None
    cluster_state: ClusterState | None = None

    @property
    def clusters(self) -> tuple[tuple[int, ...], ...] | None:
        return None if self.cluster_state is None else self.cluster_state.clusters


def collect_deltas(
    model: Model,
    global_params: ParameterVector,
    clients: list[ClientDataset],
    hp: TrainingHyperparams,
    experiment_seed: int,
) -> dict[int, np.ndarray]:
    """Per-client update vectors for clustering: local minus global parameters.

    Every client participates; the local pass uses the same epochs, batch size
    and learning rate as a normal round. These deltas feed clustering only and
    never contribute to a model update.
    """
    deltas = {}
    for client in clients:
        local = client_update(model, global_params, client, hp, delta_seed(experiment_seed, client.client_id))
        deltas[client.client_id] = local.values - global_params.values
    return deltas


def evaluate(
    model: Model,
    clients: list[ClientDataset],
    params_for_client: dict[int, ParameterVector],
    target_accuracy: float,
    weight_by_samples: bool = False,
) -> tuple[float, float, dict[int, float]]:
    """Mean per-client test accuracy and the percentage of clients at target.

    The mean is unweighted across clients unless weight_by_samples is set.
    Clients with an empty test set (possible only in tiny pre-partitioned
    exports) are excluded.
    """
    accuracies: dict[int, float] = {}
    weights: dict[int, int] = {}
    for client in clients:
        if client.test.size == 0:
            continue
        params = params_for_client[client.client_id]
        predicted = model.predict(params, client.test.images)
        accuracies[client.client_id] = float((predicted == client.test.labels).mean())
        weights[client.client_id] = client.n_k
    if not accuracies:
        raise ValueError("no client has test data to evaluate")
    values = np.array(list(accuracies.values()))
    if weight_by_samples:
        wts = np.array([weights[cid] for cid in accuracies])
        mean = float((values * wts).sum() / wts.sum())
    else:
        mean = float(values.mean())
    pct = float(100.0 * (values >= target_accuracy).mean())
    return mean, pct, accuracies


def _round_metrics(
    round_index: int,
    model: Model,
    clients: list[ClientDataset],
    state: ClusterState,
    cfg: ExperimentConfig,
    wall_ms: int,
) -> RoundMetrics:
    params_for_client = {
        cid: state.params[ci] for ci, members in enumerate(state.clusters) for cid in members
    }
    mean, pct, accuracies = evaluate(
        model, clients, params_for_client, cfg.target_accuracy, cfg.weight_by_samples
    )
    per_cluster = []
    for ci, members in enumerate(state.clusters):
        member_accs = [accuracies[cid] for cid in members if cid in accuracies]
        cluster_mean = float(np.mean(member_accs)) if member_accs else 0.0
        per_cluster.append(ClusterStats(ci, len(members), cluster_mean))
    return RoundMetrics(
        round=round_index,
        mean_test_accuracy=mean,
        pct_clients_at_target=pct,
        num_clusters=len(state.clusters),
        per_cluster=tuple(per_cluster),
        wall_time_ms=wall_ms,
    )


def run_experiment(cfg: ExperimentConfig, clients: list[ClientDataset], jobs: int = 1) -> ExperimentResult:
    """Run one full experiment and return per-round metrics plus artifacts.

    Deterministic for a fixed (config, seed) at any worker count. In
    baseline_mode the clustering step never happens and the single global
    model trains for every round.
    """
    model = Model(cfg.model)
    by_id = {c.client_id: c for c in clients}
    all_ids = tuple(sorted(by_id))
    global_params = model.init_parameters(init_seed(cfg.experiment_seed))

    state = ClusterState(clusters=(all_ids,), params={0: global_params})
    clustered = False
    dendrogram = None
    result_rounds: list[RoundMetrics] = []

    for round_index in range(1, cfg.total_rounds + 1):
        started = time.perf_counter()

        if (
            not cfg.baseline_mode
            and not clustered
            and round_index == cfg.rounds_before_cluster + 1
        ):
            shared = state.params[0]
            deltas = collect_deltas(model, shared, clients, cfg.hp, cfg.experiment_seed)
            vectors = np.stack([deltas[cid] for cid in all_ids])
            dendrogram = build_dendrogram(vectors, cfg.clustering.metric, cfg.clustering.linkage)
            assignment = cut_by_threshold(dendrogram, cfg.clustering.threshold)
            clusters = tuple(
                tuple(all_ids[leaf] for leaf in members) for members in assignment.clusters
            )
            state = ClusterState(clusters, {ci: shared.copy() for ci in range(len(clusters))})
            clustered = True

        for ci, members in enumerate(state.clusters):
            outcome = run_round(
                model,
                state.params[ci],
                [by_id[cid] for cid in members],
                cfg.hp,
                cfg.experiment_seed,
                round_index,
                jobs=jobs,
            )
            state.params[ci] = outcome.new_global

        wall_ms = int(round((time.perf_counter() - started) * 1000))
        result_rounds.append(_round_metrics(round_index, model, clients, state, cfg, wall_ms))

    return ExperimentResult(
        config=cfg,
        rounds=result_rounds,
        dendrogram=dendrogram,
        cluster_state=state if clustered else None,
    )
