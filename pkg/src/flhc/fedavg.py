"""The federated averaging engine: local training, sampling and aggregation.

Every random draw is keyed off (experiment_seed, round, client_id) style seed
sequences, so a round's outcome is independent of thread scheduling and the
worker count, and any client's trajectory can be replayed in isolation.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import ClientDataset
from .model import Model, ParameterVector

_INIT_STREAM = 0
_CLIENT_STREAM = 1
_SAMPLING_STREAM = 2
_DELTA_STREAM = 3


def init_seed(experiment_seed: int) -> np.random.SeedSequence:
    """Seed for drawing the initial global parameters."""
    return np.random.SeedSequence(experiment_seed, spawn_key=(_INIT_STREAM,))


def client_seed(experiment_seed: int, round_index: int, client_id: int) -> np.random.SeedSequence:
    """Seed for one client's local training in one round."""
    return np.random.SeedSequence(experiment_seed, spawn_key=(_CLIENT_STREAM, round_index, client_id))


def delta_seed(experiment_seed: int, client_id: int) -> np.random.SeedSequence:
    """Seed for the extra local pass that produces clustering deltas."""
    return np.random.SeedSequence(experiment_seed, spawn_key=(_DELTA_STREAM, client_id))


def sampling_seed(experiment_seed: int, round_index: int, member_ids) -> np.random.SeedSequence:
    """Seed for sampling participants from a specific client set.

    Folding the member ids in keeps per-cluster sampling streams independent,
    while a cluster holding all clients samples exactly like plain federated
    training, so the two runs coincide when clustering finds one cluster.
    """
    digest = hashlib.sha256(",".join(str(i) for i in sorted(member_ids)).encode()).digest()
    words = tuple(int.from_bytes(digest[k : k + 4], "big") for k in (0, 4))
    return np.random.SeedSequence(experiment_seed, spawn_key=(_SAMPLING_STREAM, round_index, *words))


@dataclass(frozen=True)
class TrainingHyperparams:
    """Client-side optimisation settings shared by every round."""

    local_epochs: int = 3
    batch_size: int = 10
    learning_rate: float = 0.1
    client_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        # zero is allowed so a no-movement round stays constructible in tests
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must be in (0, 1]")


@dataclass
class RoundResult:
    new_global: ParameterVector
    participating: tuple[int, ...]
    per_client_update: dict[int, ParameterVector] | None = None


def client_update(
    model: Model,
    params: ParameterVector,
    client: ClientDataset,
    hp: TrainingHyperparams,
    seed,
) -> ParameterVector:
    """Run local_epochs of mini-batch SGD from params on the client's train set.

    Batch composition is reshuffled every epoch from the given seed; indices
    within a batch are kept ascending so the mean gradient does not depend on
    the permutation. A short final batch is kept and averaged over its actual
    size. The input parameters are not modified.
    """
    if client.train.size < 1:
        raise ValueError(f"client {client.client_id} has no training data")
    rng = np.random.default_rng(seed)
    w = params.values.copy()
    images, labels = client.train.images, client.train.labels
    n, b = client.train.size, hp.batch_size
    for _ in range(hp.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, b):
            batch = np.sort(order[start : start + b])
            _, grad = model.loss_and_gradient(w, images[batch], labels[batch])
            w -= hp.learning_rate * grad
    return ParameterVector(w, params.layout)


def sample_clients(ids, fraction: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform sample without replacement of max(floor(fraction*K), 1) ids."""
    ids = sorted(ids)
    if not ids:
        raise ValueError("need at least one client id")
    m = max(int(math.floor(fraction * len(ids) + 1e-9)), 1)
    picked = rng.choice(len(ids), size=m, replace=False)
    return tuple(sorted(ids[p] for p in picked))


def aggregate(updates) -> ParameterVector:
    """Data-weighted average: sum of (n_k / N) * w_k in the order given."""
    updates = list(updates)
    if not updates:
        raise ValueError("nothing to aggregate")
    first = updates[0][0]
    total = sum(n for _, n in updates)
    acc = np.zeros_like(first.values)
    for pv, n in updates:
        if pv.values.size != first.values.size:
            raise ValueError("parameter vectors disagree on length")
        acc += (n / total) * pv.values
    return ParameterVector(acc, first.layout)


def run_round(
    model: Model,
    global_params: ParameterVector,
    clients: list[ClientDataset],
    hp: TrainingHyperparams,
    experiment_seed: int,
    round_index: int,
    jobs: int = 1,
    keep_updates: bool = False,
) -> RoundResult:
    """One communication round over the given client population.

    Samples participants, trains them (in parallel when jobs > 1) and reduces
    the updates weighted by sample count in ascending client id order. The
    result is bit-identical for any worker count.
    """
    if not clients:
        raise ValueError("need at least one client")
    by_id = {c.client_id: c for c in clients}
    rng = np.random.default_rng(sampling_seed(experiment_seed, round_index, by_id.keys()))
    chosen = sample_clients(by_id.keys(), hp.client_fraction, rng)

    def train(cid: int) -> tuple[int, ParameterVector]:
        seed = client_seed(experiment_seed, round_index, cid)
        return cid, client_update(model, global_params, by_id[cid], hp, seed)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            updates = dict(pool.map(train, chosen))
    else:
        updates = dict(train(cid) for cid in chosen)

    new_global = aggregate((updates[cid], by_id[cid].n_k) for cid in chosen)
    return RoundResult(new_global, chosen, updates if keep_updates else None)
