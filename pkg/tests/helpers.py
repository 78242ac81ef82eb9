"""Shared test utilities: synthetic datasets, IDX fixtures and the
recompute-from-scratch clustering oracle that the fast implementation is
checked against."""

from __future__ import annotations

import struct

import numpy as np
from scipy.spatial import distance as sdist

from flhc.data import LabelledDataset


def make_synthetic_digits(
    n: int,
    classes: int = 10,
    side: int = 8,
    seed: int = 0,
    noise: float = 0.25,
) -> LabelledDataset:
    """Balanced prototype-plus-noise images: learnable quickly, never trivial."""
    rng = np.random.default_rng(seed)
    prototypes = rng.choice([0.15, 0.85], size=(classes, side, side, 1))
    labels = np.tile(np.arange(classes), n // classes + 1)[:n]
    images = prototypes[labels] + rng.normal(0.0, noise, size=(n, side, side, 1))
    return LabelledDataset(np.clip(images, 0.0, 1.0), labels, classes)


def mlp_gradcheck_instance(spec, seed: int, batch: int = 8, eps: float = 1e-4):
    """(values, images, labels) for a finite-difference check at step eps.

    Central differences are not a valid derivative oracle within eps of a ReLU
    kink, so instances are redrawn until every hidden preactivation clears the
    probe window with a 3x margin.
    """
    from flhc.model import Model, ParameterVector

    model = Model(spec)
    h, w, c = spec.input_shape
    for attempt in range(100):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        values = model.init_parameters(rng.integers(2**31)).values
        images = rng.random((batch, h, w, c))
        labels = rng.integers(0, spec.num_classes, batch)
        views = ParameterVector(values, model.layout).as_arrays()
        z1 = images.reshape(batch, -1) @ views["fc1_w"] + views["fc1_b"]
        if np.abs(z1).min() > 3 * eps:
            return values, images, labels
    raise RuntimeError("could not draw a kink-free gradcheck instance")


def tiny_dataset(n: int, classes: int = 10, seed: int = 0) -> LabelledDataset:
    """One-pixel images whose values identify the example, for multiset checks."""
    rng = np.random.default_rng(seed)
    images = (np.arange(n, dtype=np.float64) / max(n, 1)).reshape(n, 1, 1, 1)
    labels = rng.integers(0, classes, n)
    return LabelledDataset(images, labels, classes)


def client_example_ids(client, source: LabelledDataset) -> list[int]:
    """Recover source indices from the identifying pixel values of tiny_dataset."""
    n = source.size
    ids = []
    for part in (client.train, client.test):
        ids.extend(int(round(v * n)) for v in part.images.reshape(-1))
    return ids


def csv_without_wall_time(path) -> str:
    """Metrics CSV content with the (non-deterministic) wall-time column dropped."""
    lines = []
    for line in path.read_text().strip().splitlines():
        lines.append(line.rsplit(",", 1)[0])
    return "\n".join(lines)


def write_idx_files(dir_path, images: np.ndarray, labels: np.ndarray):
    """Write an IDX image/label pair; images are floats in [0,1], quantised."""
    n, h, w = images.shape[0], images.shape[1], images.shape[2]
    img_path = dir_path / "images-idx3-ubyte"
    lab_path = dir_path / "labels-idx1-ubyte"
    pixel_bytes = np.round(images.reshape(n, h, w) * 255).astype(np.uint8).tobytes()
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + pixel_bytes)
    lab_path.write_bytes(struct.pack(">II", 0x801, n) + np.asarray(labels, dtype=np.uint8).tobytes())
    return img_path, lab_path


# -- brute-force agglomeration oracle -----------------------------------------
#
# Recomputes every cross-cluster linkage distance from the original points at
# every step, using scipy's distance functions. Only the tie-breaking rule
# (lowest (id_a, id_b) pair) is shared with the implementation under test.

_METRIC_FN = {
    "l1": sdist.cityblock,
    "l2": sdist.euclidean,
    "cosine": sdist.cosine,
}


def oracle_linkage_distance(points, members_a, members_b, metric, linkage):
    if linkage == "single":
        return min(_METRIC_FN[metric](points[i], points[j]) for i in members_a for j in members_b)
    if linkage == "complete":
        return max(_METRIC_FN[metric](points[i], points[j]) for i in members_a for j in members_b)
    if linkage == "average":
        return _METRIC_FN[metric](points[list(members_a)].mean(axis=0), points[list(members_b)].mean(axis=0))
    if linkage == "ward":
        na, nb = len(members_a), len(members_b)
        ca = points[list(members_a)].mean(axis=0)
        cb = points[list(members_b)].mean(axis=0)
        return na * nb / (na + nb) * float(((ca - cb) ** 2).sum())
    raise ValueError(linkage)


def oracle_dendrogram(points, metric, linkage):
    """Merge list [(a, b, distance, new_id), ...] by exhaustive recomputation.

    Pairs whose distances agree to within float rounding count as tied and
    resolve to the lowest (id_a, id_b), the same rule as the implementation;
    otherwise exact mathematical ties (e.g. cosine in one dimension) would be
    ordered by which arithmetic produced the smaller last-ulp noise.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    clusters = {i: (i,) for i in range(n)}
    merges = []
    next_id = n
    while len(clusters) > 1:
        ids = sorted(clusters)
        candidates = [
            (oracle_linkage_distance(points, clusters[a], clusters[b], metric, linkage), a, b)
            for ai, a in enumerate(ids)
            for b in ids[ai + 1 :]
        ]
        dmin = min(d for d, _, _ in candidates)
        window = max(1e-12, 1e-9 * abs(dmin))
        d, a, b = min((c for c in candidates if c[0] <= dmin + window), key=lambda c: (c[1], c[2]))
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        merges.append((a, b, d, next_id))
        next_id += 1
    return merges


ALL_COMBOS = tuple(
    (metric, linkage)
    for metric in ("l1", "l2", "cosine")
    for linkage in ("single", "complete", "average")
) + (("l2", "ward"),)
