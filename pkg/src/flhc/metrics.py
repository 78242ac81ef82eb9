"""Per-round evaluation records, CSV persistence and run comparison."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

CSV_HEADER = ("round", "mean_test_accuracy", "pct_clients_at_target", "num_clusters", "wall_time_ms")
CLUSTERS_CSV_HEADER = ("round", "cluster_id", "size", "mean_accuracy")

UNDEFINED = "--"


@dataclass(frozen=True)
class ClusterStats:
    cluster_id: int
    size: int
    mean_accuracy: float


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    mean_test_accuracy: float
    pct_clients_at_target: float
    num_clusters: int
    per_cluster: tuple[ClusterStats, ...]
    wall_time_ms: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.mean_test_accuracy <= 1.0:
            raise ValueError("mean_test_accuracy must be in [0, 1]")
        if not 0.0 <= self.pct_clients_at_target <= 100.0:
            raise ValueError("pct_clients_at_target must be in [0, 100]")
        if self.num_clusters != len(self.per_cluster):
            raise ValueError("num_clusters must match the per-cluster breakdown")


def _check_run(run) -> list[RoundMetrics]:
    run = list(run)
    if not run:
        raise ValueError("empty run")
    rounds = [m.round for m in run]
    if rounds != list(range(rounds[0], rounds[0] + len(rounds))):
        raise ValueError("rounds must be consecutive and increasing")
    return run


def write_csv(run, path, config: dict | None = None) -> None:
    """Write one row per round; accuracies carry six fractional digits.

    When a config dict is given, the fully resolved experiment configuration
    (seeds included) is written next to the CSV as <stem>_config.json.
    """
    run = _check_run(run)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for m in run:
            writer.writerow(
                (
                    m.round,
                    f"{m.mean_test_accuracy:.6f}",
                    f"{m.pct_clients_at_target:.6f}",
                    m.num_clusters,
                    m.wall_time_ms,
                )
            )
    if config is not None:
        sibling = path.with_name(path.stem + "_config.json")
        sibling.write_text(json.dumps(config, indent=2, sort_keys=True))


def write_clusters_csv(run, path) -> None:
    """Per-cluster detail (round, cluster_id, size, mean_accuracy) as a flat CSV."""
    run = _check_run(run)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CLUSTERS_CSV_HEADER)
        for m in run:
            for c in m.per_cluster:
                writer.writerow((m.round, c.cluster_id, c.size, f"{c.mean_accuracy:.6f}"))


def read_csv(path) -> list[dict]:
    """Rows of the primary CSV with numeric fields parsed back."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}")
        return [
            {
                "round": int(row["round"]),
                "mean_test_accuracy": float(row["mean_test_accuracy"]),
                "pct_clients_at_target": float(row["pct_clients_at_target"]),
                "num_clusters": int(row["num_clusters"]),
                "wall_time_ms": int(row["wall_time_ms"]),
            }
            for row in reader
        ]


@dataclass(frozen=True)
class ComparisonReport:
    """Clustered-over-plain ratios at the post-cluster round and the final round.

    Percentage ratios are None when the plain run's percentage is zero; they
    render as "--".
    """

    post_cluster_acc_ratio: float
    final_acc_ratio: float
    post_cluster_pct_ratio: float | None
    final_pct_ratio: float | None

    def rendered(self) -> dict[str, str]:
        def fmt(value: float | None) -> str:
            return UNDEFINED if value is None else f"{value:.1f}x"

        return {
            "post_cluster_acc_ratio": fmt(self.post_cluster_acc_ratio),
            "final_acc_ratio": fmt(self.final_acc_ratio),
            "post_cluster_pct_ratio": fmt(self.post_cluster_pct_ratio),
            "final_pct_ratio": fmt(self.final_pct_ratio),
        }


def _at_round(run: list[RoundMetrics], round_index: int) -> RoundMetrics:
    for m in run:
        if m.round == round_index:
            return m
    raise ValueError(f"run does not cover round {round_index}")


def compare(clustered_run, plain_run, post_cluster_round: int, final_round: int) -> ComparisonReport:
    """Ratios of clustered over plain metrics at the two reporting rounds."""
    clustered_run, plain_run = _check_run(clustered_run), _check_run(plain_run)

    def ratio(num: float, den: float) -> float | None:
        return None if den == 0 else num / den

    c_post, c_final = _at_round(clustered_run, post_cluster_round), _at_round(clustered_run, final_round)
    p_post, p_final = _at_round(plain_run, post_cluster_round), _at_round(plain_run, final_round)
    return ComparisonReport(
        post_cluster_acc_ratio=c_post.mean_test_accuracy / p_post.mean_test_accuracy,
        final_acc_ratio=c_final.mean_test_accuracy / p_final.mean_test_accuracy,
        post_cluster_pct_ratio=ratio(c_post.pct_clients_at_target, p_post.pct_clients_at_target),
        final_pct_ratio=ratio(c_final.pct_clients_at_target, p_final.pct_clients_at_target),
    )
