"""Dataset ingestion and client partitioning.

Loads the digit dataset from IDX binaries, loads pre-partitioned datasets from
a JSON export, and synthesises the three client partitions used in the
experiments: evenly shuffled (iid), sort-and-shard by label (pathological),
and shuffled groups with one label pair swapped per group (label-swapped).

Each client keeps 1/6 of its allocation (at least one example, never all of
them) as a local test set drawn by the same rule as its training data.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

IID = "iid"
PATHOLOGICAL = "pathological"
LABEL_SWAPPED = "label_swapped"
PREPARTITIONED = "prepartitioned"

DEFAULT_SWAP_GROUPS = ((0, 8), (1, 7), (3, 9), (4, 6))

TEST_HOLDOUT_FRACTION = 6  # one sixth of each client's examples


class DatasetError(Exception):
    """Base class for dataset loading and partitioning failures."""


class IdxMagicError(DatasetError):
    pass


class IdxTruncatedError(DatasetError):
    pass


class IdxCountMismatchError(DatasetError):
    pass


class SchemaError(DatasetError):
    """Pre-partitioned JSON violates the documented schema; names the field."""


@dataclass
class LabelledDataset:
    """Normalised examples: images (N,H,W,C) float64 in [0,1], integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (N,H,W,C), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DatasetError("labels must be one int per image")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetError("label outside [0, class_count)")

    @property
    def size(self) -> int:
        return int(self.labels.size)

    def subset(self, indices: np.ndarray) -> "LabelledDataset":
        return LabelledDataset(self.images[indices], self.labels[indices], self.class_count)


@dataclass
class ClientDataset:
    """One client's local train/test split; n_k is the training sample count."""

    client_id: int
    train: LabelledDataset
    test: LabelledDataset
    group_id: int | None = None
    source_id: str | None = None

    def __post_init__(self) -> None:
        if self.train.size < 1:
            raise DatasetError(f"client {self.client_id} has an empty training set")

    @property
    def n_k(self) -> int:
        return self.train.size


@dataclass(frozen=True)
class PartitionScheme:
    """How to carve a dataset into clients."""

    kind: str
    num_clients: int = 100
    labels_per_client: int = 2
    swap_groups: tuple[tuple[int, int], ...] = DEFAULT_SWAP_GROUPS
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (IID, PATHOLOGICAL, LABEL_SWAPPED, PREPARTITIONED):
            raise ValueError(f"unknown partition kind {self.kind!r}")
        object.__setattr__(
            self, "swap_groups", tuple((int(a), int(b)) for a, b in self.swap_groups)
        )
        if self.kind != PREPARTITIONED and self.num_clients < 1:
            raise ValueError("num_clients must be at least 1")
        if self.kind == PATHOLOGICAL and self.labels_per_client < 1:
            raise ValueError("labels_per_client must be at least 1")
        if self.kind == LABEL_SWAPPED:
            if not self.swap_groups:
                raise ValueError("label-swapped partition needs at least one swap group")
            if self.num_clients % len(self.swap_groups):
                raise ValueError("num_clients must divide evenly into the swap groups")
            flat = [lab for pair in self.swap_groups for lab in pair]
            if len(set(flat)) != len(flat):
                raise ValueError("swap pairs must be disjoint")


# -- IDX loading -------------------------------------------------------------


def _read_be32(buf: bytes, offset: int, path: Path) -> int:
    if offset + 4 > len(buf):
        raise IdxTruncatedError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path, class_count: int | None = None) -> LabelledDataset:
    """Parse an IDX image/label file pair into a normalised dataset.

    Big-endian throughout; pixel bytes are scaled to [0,1] by dividing by 255.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_buf = images_path.read_bytes()
    lab_buf = labels_path.read_bytes()

    magic = _read_be32(img_buf, 0, images_path)
    if magic != IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    count = _read_be32(img_buf, 4, images_path)
    rows = _read_be32(img_buf, 8, images_path)
    cols = _read_be32(img_buf, 12, images_path)
    if len(img_buf) < 16 + count * rows * cols:
        raise IdxTruncatedError(f"{images_path}: expected {count * rows * cols} pixel bytes")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=count * rows * cols, offset=16)

    magic = _read_be32(lab_buf, 0, labels_path)
    if magic != LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    lab_count = _read_be32(lab_buf, 4, labels_path)
    if len(lab_buf) < 8 + lab_count:
        raise IdxTruncatedError(f"{labels_path}: expected {lab_count} label bytes")
    if lab_count != count:
        raise IdxCountMismatchError(f"{count} images but {lab_count} labels")
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=lab_count, offset=8)

    images = pixels.reshape(count, rows, cols, 1).astype(np.float64) / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1 if lab_count else 0
    return LabelledDataset(images, labels.astype(np.int64), class_count)


# -- partition helpers -------------------------------------------------------


def holdout_sizes(allocated: int) -> tuple[int, int]:
    """(train, test) sizes for a client allocated this many examples."""
    if allocated < 1:
        raise ValueError("client allocation must be at least 1")
    if allocated == 1:
        return 1, 0
    test = min(max(1, allocated // TEST_HOLDOUT_FRACTION), allocated - 1)
    return allocated - test, test


def _make_client(
    client_id: int,
    data: LabelledDataset,
    indices: np.ndarray,
    rng: np.random.Generator | None,
    group_id: int | None = None,
    labels_override: np.ndarray | None = None,
    source_id: str | None = None,
) -> ClientDataset:
    if rng is not None:
        indices = indices[rng.permutation(len(indices))]
    train_n, _ = holdout_sizes(len(indices))
    labels = data.labels[indices] if labels_override is None else labels_override[indices]
    images = data.images[indices]
    train = LabelledDataset(images[:train_n], labels[:train_n], data.class_count)
    test = LabelledDataset(images[train_n:], labels[train_n:], data.class_count)
    return ClientDataset(client_id, train, test, group_id=group_id, source_id=source_id)


def partition_iid(data: LabelledDataset, num_clients: int, seed) -> list[ClientDataset]:
    """Shuffle everything and split it evenly; remainder examples are dropped."""
    if num_clients < 1:
        raise ValueError("num_clients must be at least 1")
    alloc = data.size // num_clients
    if alloc < 1:
        raise DatasetError(f"{data.size} examples cannot cover {num_clients} clients")
    dropped = data.size - alloc * num_clients
    if dropped:
        logger.info("iid partition drops %d remainder examples", dropped)
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.size)
    return [
        _make_client(c, data, order[c * alloc : (c + 1) * alloc], rng)
        for c in range(num_clients)
    ]


def _pathological_shard_size(label_counts: np.ndarray, num_shards: int) -> int:
    """Largest shard size such that label-pure contiguous shards cover the demand."""
    total = int(label_counts.sum())
    size = total // num_shards
    while size >= 1:
        if int((label_counts // size).sum()) >= num_shards:
            return size
        size -= 1
    raise DatasetError(f"cannot build {num_shards} label-pure shards from this dataset")


def partition_pathological(
    data: LabelledDataset, num_clients: int, labels_per_client: int, seed
) -> list[ClientDataset]:
    """Sort by label, cut label-pure equal shards, deal labels_per_client each.

    Shards never straddle a label boundary, so a client holds at most
    labels_per_client distinct labels; per-label remainders are dropped.
    """
    num_shards = num_clients * labels_per_client
    counts = np.bincount(data.labels, minlength=data.class_count)
    shard_size = _pathological_shard_size(counts, num_shards)

    order = np.argsort(data.labels, kind="stable")
    shards = []
    start = 0
    for label in range(data.class_count):
        block = order[start : start + counts[label]]
        start += counts[label]
        for s in range(len(block) // shard_size):
            shards.append(block[s * shard_size : (s + 1) * shard_size])

    dropped = data.size - len(shards) * shard_size
    if dropped or len(shards) > num_shards:
        logger.info(
            "pathological partition drops %d examples (%d spare shards)",
            dropped + (len(shards) - num_shards) * shard_size,
            len(shards) - num_shards,
        )
    rng = np.random.default_rng(seed)
    dealt = rng.permutation(len(shards))[:num_shards]
    clients = []
    for c in range(num_clients):
        picked = dealt[c * labels_per_client : (c + 1) * labels_per_client]
        indices = np.concatenate([shards[s] for s in picked])
        clients.append(_make_client(c, data, indices, rng))
    return clients


def swap_labels(labels: np.ndarray, pairs) -> np.ndarray:
    """Exchange each (a, b) pair of label values; an empty pair list is identity."""
    out = np.array(labels, copy=True)
    for a, b in pairs:
        mask_a = labels == a
        mask_b = labels == b
        out[mask_a] = b
        out[mask_b] = a
    return out


def partition_label_swapped(
    data: LabelledDataset, num_clients: int, swap_groups, seed
) -> list[ClientDataset]:
    """Shuffle, split into one group per swap pair, swap that pair's labels,
    then divide each group evenly among its clients. The originating group id
    is kept on every client as clustering ground truth.
    """
    swap_groups = tuple(tuple(pair) for pair in swap_groups)
    groups = len(swap_groups)
    if groups == 0 or num_clients % groups:
        raise ValueError("num_clients must divide evenly into the swap groups")
    per_client = data.size // num_clients
    if per_client < 1:
        raise DatasetError(f"{data.size} examples cannot cover {num_clients} clients")
    dropped = data.size - per_client * num_clients
    if dropped:
        logger.info("label-swapped partition drops %d remainder examples", dropped)

    rng = np.random.default_rng(seed)
    order = rng.permutation(data.size)
    clients_per_group = num_clients // groups
    swapped = {g: swap_labels(data.labels, [swap_groups[g]]) for g in range(groups)}

    clients = []
    for c in range(num_clients):
        g = c // clients_per_group
        indices = order[c * per_client : (c + 1) * per_client]
        clients.append(_make_client(c, data, indices, rng, group_id=g, labels_override=swapped[g]))
    return clients


def partition(data: LabelledDataset, scheme: PartitionScheme, default_seed: int = 0) -> list[ClientDataset]:
    """Dispatch on the scheme kind; the scheme seed falls back to default_seed."""
    seed = scheme.seed if scheme.seed is not None else default_seed
    if scheme.kind == IID:
        return partition_iid(data, scheme.num_clients, seed)
    if scheme.kind == PATHOLOGICAL:
        return partition_pathological(data, scheme.num_clients, scheme.labels_per_client, seed)
    if scheme.kind == LABEL_SWAPPED:
        return partition_label_swapped(data, scheme.num_clients, scheme.swap_groups, seed)
    raise ValueError(f"partition() cannot build {scheme.kind!r} (load it from file instead)")


# -- pre-partitioned JSON ----------------------------------------------------


def _require(condition: bool, where: str, message: str) -> None:
    if not condition:
        raise SchemaError(f"{where}: {message}")


def load_prepartitioned(path) -> list[ClientDataset]:
    """Load per-user datasets from the documented JSON export.

    Schema: {"class_count": int, "shape": [h, w, c],
             "clients": [{"id": str, "examples": [{"x": [...], "label": int}]}]}
    with x row-major of length h*w*c and values in [0, 1]. The last sixth of
    each user's examples (in file order) becomes the local test set.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: not valid JSON ({err})") from None

    _require(isinstance(doc, dict), "$", "top level must be an object")
    unknown = set(doc) - {"class_count", "shape", "clients"}
    _require(not unknown, "$", f"unknown keys {sorted(unknown)}")
    for key in ("class_count", "shape", "clients"):
        _require(key in doc, key, "missing")
    _require(isinstance(doc["class_count"], int) and doc["class_count"] >= 2, "class_count", "must be an int >= 2")
    shape = doc["shape"]
    _require(
        isinstance(shape, list) and len(shape) == 3 and all(isinstance(d, int) and d >= 1 for d in shape),
        "shape",
        "must be [height, width, channels]",
    )
    _require(isinstance(doc["clients"], list) and doc["clients"], "clients", "must be a non-empty list")

    class_count = doc["class_count"]
    h, w, c = shape
    seen_ids: set[str] = set()
    clients = []
    for i, entry in enumerate(doc["clients"]):
        where = f"clients[{i}]"
        _require(isinstance(entry, dict), where, "must be an object")
        _require(set(entry) == {"id", "examples"}, where, "must have exactly 'id' and 'examples'")
        _require(isinstance(entry["id"], str), f"{where}.id", "must be a string")
        _require(entry["id"] not in seen_ids, f"{where}.id", f"duplicate client id {entry['id']!r}")
        seen_ids.add(entry["id"])
        examples = entry["examples"]
        _require(isinstance(examples, list) and examples, f"{where}.examples", "must be a non-empty list")

        images = np.empty((len(examples), h, w, c))
        labels = np.empty(len(examples), dtype=np.int64)
        for j, ex in enumerate(examples):
            ewhere = f"{where}.examples[{j}]"
            _require(isinstance(ex, dict) and set(ex) == {"x", "label"}, ewhere, "must have exactly 'x' and 'label'")
            x = ex["x"]
            _require(isinstance(x, list) and len(x) == h * w * c, f"{ewhere}.x", f"must be {h * w * c} numbers")
            arr = np.asarray(x, dtype=np.float64)
            _require(bool(np.isfinite(arr).all()) and arr.min() >= 0.0 and arr.max() <= 1.0, f"{ewhere}.x", "values must be in [0, 1]")
            _require(isinstance(ex["label"], int) and 0 <= ex["label"] < class_count, f"{ewhere}.label", f"must be an int in [0, {class_count})")
            images[j] = arr.reshape(h, w, c)
            labels[j] = ex["label"]

        data = LabelledDataset(images, labels, class_count)
        clients.append(
            _make_client(i, data, np.arange(data.size), rng=None, source_id=entry["id"])
        )
    return clients
