"""Agglomerative clustering of client update vectors.

Naive O(n^3) agglomeration over a full distance matrix, as appropriate for a
one-shot clustering step on the server. Supported distance metrics are L1, L2
and cosine; linkage mechanisms are single (closest cross-pair), complete
(farthest cross-pair), average (distance between cluster mean vectors) and
Ward (variance-increase cost, L2 only, maintained with the Lance-Williams
recurrence).

Note that "average" here compares cluster centroids, not the mean of pairwise
distances (UPGMA) that several libraries use under the same name. Centroid
linkage can produce non-monotone merge sequences; single, complete and Ward
are monotone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

L1 = "l1"
L2 = "l2"
COSINE = "cosine"
METRICS = (L1, L2, COSINE)

SINGLE = "single"
COMPLETE = "complete"
AVERAGE = "average"
WARD = "ward"
LINKAGES = (SINGLE, COMPLETE, AVERAGE, WARD)


@dataclass(frozen=True)
class ClusteringConfig:
    metric: str
    linkage: str
    threshold: float

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}")
        if self.linkage == WARD and self.metric != L2:
            raise ValueError("ward linkage is defined for the l2 metric only")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class Merge:
    a: int
    b: int
    distance: float
    new_id: int


@dataclass(frozen=True)
class Dendrogram:
    """Full merge history; leaves are 0..leaf_count-1, merge k creates id leaf_count+k."""

    merges: tuple[Merge, ...]
    leaf_count: int

    def __post_init__(self) -> None:
        if len(self.merges) != self.leaf_count - 1:
            raise ValueError("a dendrogram over n leaves has exactly n-1 merges")


@dataclass(frozen=True)
class ClusterAssignment:
    """A flat partition of the leaf set; members are sorted, clusters ordered by first member."""

    clusters: tuple[tuple[int, ...], ...]

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    def labels(self) -> np.ndarray:
        total = sum(len(c) for c in self.clusters)
        out = np.empty(total, dtype=np.int64)
        for idx, members in enumerate(self.clusters):
            out[list(members)] = idx
        return out


def pairwise_distance(a, b, metric: str) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"vectors disagree on length: {a.shape} vs {b.shape}")
    if metric == L1:
        return float(np.abs(a - b).sum())
    if metric == L2:
        return float(np.sqrt(((a - b) ** 2).sum()))
    if metric == COSINE:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise ValueError("cosine distance is undefined for a zero vector")
        return float(1.0 - (a @ b) / (na * nb))
    raise ValueError(f"unknown metric {metric!r}")


def distance_matrix(points: np.ndarray, metric: str) -> np.ndarray:
    """Full symmetric pairwise distance matrix, computed row by row."""
    n = len(points)
    out = np.zeros((n, n))
    if metric == COSINE:
        norms = np.linalg.norm(points, axis=1)
        if (norms == 0.0).any():
            raise ValueError("cosine distance is undefined for a zero vector")
    for i in range(n):
        diff = points[i + 1 :] - points[i]
        if metric == L1:
            row = np.abs(diff).sum(axis=1)
        elif metric == L2:
            row = np.sqrt((diff**2).sum(axis=1))
        else:
            row = 1.0 - (points[i + 1 :] @ points[i]) / (norms[i + 1 :] * norms[i])
        out[i, i + 1 :] = row
        out[i + 1 :, i] = row
    return out


def _initial_distances(points: np.ndarray, metric: str, linkage: str) -> np.ndarray:
    if linkage == WARD:
        # Ward merge cost between singletons i and j is ||xi - xj||^2 / 2.
        diff = distance_matrix(points, L2)
        return 0.5 * diff**2
    return distance_matrix(points, metric)


def build_dendrogram(points, metric: str, linkage: str) -> Dendrogram:
    """Agglomerate singletons into one cluster, recording every merge.

    Nearest-pair ties break on the lowest (id_a, id_b) pair, which makes the
    merge sequence deterministic and permutation-equivariant.
    """
    ClusteringConfig(metric, linkage, threshold=1.0)  # reuse the pairing validation
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        points = points.reshape(len(points), -1)
    n = len(points)
    if n < 1:
        raise ValueError("need at least one point")
    if n == 1:
        return Dendrogram((), 1)

    init = _initial_distances(points, metric, linkage)
    dist: dict[tuple[int, int], float] = {
        (i, j): float(init[i, j]) for i in range(n) for j in range(i + 1, n)
    }
    size = {i: 1 for i in range(n)}
    vecsum = {i: points[i].copy() for i in range(n)}

    merges = []
    for step in range(n - 1):
        (a, b) = min(dist, key=lambda key: (dist[key], key))
        d_ab = dist[(a, b)]
        new_id = n + step
        merges.append(Merge(a, b, d_ab, new_id))

        others = [c for c in size if c != a and c != b]
        size[new_id] = size[a] + size[b]
        vecsum[new_id] = vecsum[a] + vecsum[b]
        for c in others:
            d_ac = dist.pop(tuple(sorted((a, c))))
            d_bc = dist.pop(tuple(sorted((b, c))))
            if linkage == SINGLE:
                d_new = min(d_ac, d_bc)
            elif linkage == COMPLETE:
                d_new = max(d_ac, d_bc)
            elif linkage == AVERAGE:
                d_new = pairwise_distance(
                    vecsum[new_id] / size[new_id], vecsum[c] / size[c], metric
                )
            else:  # WARD, Lance-Williams on the variance-increase cost
                na, nb, nc = size[a], size[b], size[c]
                d_new = ((na + nc) * d_ac + (nb + nc) * d_bc - nc * d_ab) / (na + nb + nc)
            dist[(c, new_id)] = d_new
        del dist[(a, b)], size[a], size[b], vecsum[a], vecsum[b]

    return Dendrogram(tuple(merges), n)


def cut_by_threshold(dendrogram: Dendrogram, threshold: float) -> ClusterAssignment:
    """Flat clusters from applying merges strictly below the threshold, in order.

    Stops at the first merge at or above the threshold; for monotone merge
    sequences this is exactly "apply every merge below it".
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    members: dict[int, list[int]] = {i: [i] for i in range(dendrogram.leaf_count)}
    for merge in dendrogram.merges:
        if merge.distance >= threshold:
            break
        members[merge.new_id] = members.pop(merge.a) + members.pop(merge.b)
    clusters = sorted(tuple(sorted(m)) for m in members.values())
    return ClusterAssignment(tuple(clusters))


def dendrogram_to_json(dendrogram: Dendrogram) -> list[dict]:
    return [
        {"a": m.a, "b": m.b, "distance": m.distance, "new_id": m.new_id}
        for m in dendrogram.merges
    ]


def save_dendrogram(dendrogram: Dendrogram, path) -> None:
    Path(path).write_text(json.dumps(dendrogram_to_json(dendrogram), indent=2))
