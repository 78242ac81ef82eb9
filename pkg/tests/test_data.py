"""IDX parsing, the three synthetic partitions and the pre-partitioned loader."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from flhc.data import (
    DatasetError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    LabelledDataset,
    PartitionScheme,
    SchemaError,
    holdout_sizes,
    load_idx,
    load_prepartitioned,
    partition,
    partition_iid,
    partition_label_swapped,
    partition_pathological,
    swap_labels,
)
from helpers import client_example_ids, make_synthetic_digits, tiny_dataset, write_idx_files


# -- IDX ----------------------------------------------------------------------


def test_load_idx_exact_pixels(tmp_path):
    images = np.array([[[7, 0], [255, 3]], [[1, 2], [3, 4]]], dtype=np.uint8)
    img_path = tmp_path / "img"
    lab_path = tmp_path / "lab"
    img_path.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + images.tobytes())
    lab_path.write_bytes(struct.pack(">II", 0x801, 2) + bytes([5, 9]))
    ds = load_idx(img_path, lab_path)
    assert ds.size == 2
    assert ds.class_count == 10
    np.testing.assert_array_equal(ds.labels, [5, 9])
    np.testing.assert_array_equal(ds.images, images.reshape(2, 2, 2, 1) / 255.0)
    assert ds.images[0, 0, 0, 0] == 7 / 255


def test_load_idx_wrong_magic(tmp_path):
    img_path = tmp_path / "img"
    lab_path = tmp_path / "lab"
    img_path.write_bytes(struct.pack(">IIII", 0x803, 1, 1, 1) + bytes([0]))
    lab_path.write_bytes(struct.pack(">II", 0x803, 1) + bytes([0]))  # image magic on labels
    with pytest.raises(IdxMagicError):
        load_idx(img_path, lab_path)
    lab_ok = tmp_path / "lab2"
    lab_ok.write_bytes(struct.pack(">II", 0x801, 1) + bytes([0]))
    bad_img = tmp_path / "img2"
    bad_img.write_bytes(struct.pack(">IIII", 0x801, 1, 1, 1) + bytes([0]))
    with pytest.raises(IdxMagicError):
        load_idx(bad_img, lab_ok)


def test_load_idx_truncated(tmp_path):
    img_path = tmp_path / "img"
    lab_path = tmp_path / "lab"
    img_path.write_bytes(struct.pack(">IIII", 0x803, 4, 2, 2) + bytes(7))  # needs 16 bytes
    lab_path.write_bytes(struct.pack(">II", 0x801, 4) + bytes(4))
    with pytest.raises(IdxTruncatedError):
        load_idx(img_path, lab_path)


def test_load_idx_count_mismatch(tmp_path):
    img_path = tmp_path / "img"
    lab_path = tmp_path / "lab"
    img_path.write_bytes(struct.pack(">IIII", 0x803, 2, 1, 1) + bytes(2))
    lab_path.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(IdxCountMismatchError):
        load_idx(img_path, lab_path)


def test_idx_roundtrip_via_writer(tmp_path):
    ds = make_synthetic_digits(30, seed=1)
    img, lab = write_idx_files(tmp_path, ds.images, ds.labels)
    loaded = load_idx(img, lab)
    assert loaded.size == 30
    np.testing.assert_array_equal(loaded.labels, ds.labels)
    assert np.abs(loaded.images - ds.images).max() <= 0.5 / 255


# -- holdout ------------------------------------------------------------------


def test_holdout_sizes():
    assert holdout_sizes(600) == (500, 100)
    assert holdout_sizes(2) == (1, 1)
    assert holdout_sizes(1) == (1, 0)
    assert holdout_sizes(7) == (6, 1)


# -- iid ----------------------------------------------------------------------


def test_iid_even_split_and_exhaustive():
    ds = tiny_dataset(10)
    clients = partition_iid(ds, 10, seed=0)
    assert len(clients) == 10
    assert all(c.train.size + c.test.size == 1 for c in clients)
    used = sorted(i for c in clients for i in client_example_ids(c, ds))
    assert used == list(range(10))


def test_iid_allocation_counts():
    ds = tiny_dataset(60_000)
    clients = partition_iid(ds, 100, seed=1)
    assert len(clients) == 100
    assert all(c.train.size == 500 and c.test.size == 100 for c in clients)


def test_iid_label_histograms_match_global():
    ds = tiny_dataset(60_000, seed=3)
    clients = partition_iid(ds, 100, seed=3)
    table = np.stack([np.bincount(c.train.labels, minlength=10) for c in clients])
    _, p_value, _, _ = chi2_contingency(table)
    assert p_value > 0.01


# -- pathological -------------------------------------------------------------


def test_pathological_label_cap_and_sizes():
    ds = make_synthetic_digits(8000, seed=2)
    clients = partition_pathological(ds, 20, labels_per_client=2, seed=2)
    assert len(clients) == 20
    for c in clients:
        assert len(np.unique(np.concatenate([c.train.labels, c.test.labels]))) <= 2
        assert c.train.size + c.test.size == 400


def test_pathological_two_singleton_labels():
    images = np.arange(4, dtype=np.float64).reshape(4, 1, 1, 1) / 4
    ds = LabelledDataset(images, np.array([0, 0, 1, 1]), 2)
    clients = partition_pathological(ds, 2, labels_per_client=1, seed=0)
    label_sets = sorted(set(np.concatenate([c.train.labels, c.test.labels])) for c in clients)
    assert label_sets == [{0}, {1}]


def test_pathological_union_is_subset_without_duplicates():
    ds = tiny_dataset(1000, classes=5, seed=4)
    clients = partition_pathological(ds, 10, labels_per_client=2, seed=4)
    used = [i for c in clients for i in client_example_ids(c, ds)]
    assert len(used) == len(set(used))
    assert set(used) <= set(range(1000))


# -- label swapped -------------------------------------------------------------


def test_label_swapped_group_structure():
    ds = make_synthetic_digits(2000, seed=5)
    groups = ((0, 8), (1, 7), (3, 9), (4, 6))
    clients = partition_label_swapped(ds, 20, groups, seed=5)
    assert [c.group_id for c in clients] == [g for g in range(4) for _ in range(5)]
    assert all(c.train.size + c.test.size == 100 for c in clients)


def test_label_swapped_applies_the_pair():
    ds = make_synthetic_digits(1200, seed=6)
    clients = partition_label_swapped(ds, 4, ((3, 9), (0, 1), (2, 4), (5, 6)), seed=6)
    # group 0 swaps 3<->9: reconstruct original labels from the source by pixel id
    client = clients[0]
    assert client.group_id == 0
    got = np.concatenate([client.train.labels, client.test.labels])
    assert (got == 3).sum() > 0 and (got == 9).sum() > 0  # both sides present


def test_label_swapped_counts_match_source_distribution():
    # within a group, label a's count equals the source count of label b
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 10, 5000)
    images = np.zeros((5000, 1, 1, 1))
    images[:, 0, 0, 0] = labels / 10  # pixel encodes the original label
    ds = LabelledDataset(images, labels, 10)
    clients = partition_label_swapped(ds, 4, ((3, 9),) + ((0, 8), (1, 7), (4, 6))[:3], seed=7)
    g0 = clients[0]
    for part in (g0.train, g0.test):
        original = np.round(part.images.reshape(-1) * 10).astype(int)
        swapped = swap_labels(original, [(3, 9)])
        np.testing.assert_array_equal(part.labels, swapped)


def test_swap_labels_involution_and_identity():
    labels = np.random.default_rng(8).integers(0, 10, 500)
    pairs = [(3, 9), (0, 8)]
    np.testing.assert_array_equal(swap_labels(swap_labels(labels, pairs), pairs), labels)
    np.testing.assert_array_equal(swap_labels(labels, []), labels)


def test_label_swapped_divisibility_enforced():
    with pytest.raises(ValueError):
        PartitionScheme("label_swapped", num_clients=10, swap_groups=((0, 1), (2, 3), (4, 5)))
    with pytest.raises(ValueError):
        PartitionScheme("label_swapped", num_clients=8, swap_groups=((0, 1), (1, 2)))


# -- shared partition properties ------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(
    kind=st.sampled_from(["iid", "pathological", "label_swapped"]),
    num_clients=st.sampled_from([2, 4, 8]),
    seed=st.integers(0, 2**20),
)
def test_partition_properties(kind, num_clients, seed):
    ds = tiny_dataset(takes_n := 400, classes=6, seed=seed % 97)
    scheme = PartitionScheme(
        kind,
        num_clients=num_clients,
        labels_per_client=2,
        swap_groups=((0, 5), (1, 4)),
        seed=seed,
    )
    clients = partition(ds, scheme)
    assert len(clients) == num_clients
    used = [i for c in clients for i in client_example_ids(c, ds)]
    assert len(used) == len(set(used)), "no example may be assigned twice"
    assert set(used) <= set(range(takes_n))
    if kind == "pathological":
        for c in clients:
            assert len(set(c.train.labels)) <= 2
    again = partition(ds, scheme)
    for a, b in zip(clients, again):
        np.testing.assert_array_equal(a.train.images, b.train.images)
        np.testing.assert_array_equal(a.train.labels, b.train.labels)
        np.testing.assert_array_equal(a.test.labels, b.test.labels)


# -- pre-partitioned -------------------------------------------------------------


def valid_doc():
    return {
        "class_count": 3,
        "shape": [2, 2, 1],
        "clients": [
            {
                "id": "writer_a",
                "examples": [
                    {"x": [0.0, 0.25, 0.5, 1.0], "label": 0},
                    {"x": [1.0, 0.0, 0.0, 0.0], "label": 2},
                    {"x": [0.1, 0.2, 0.3, 0.4], "label": 1},
                ],
            },
            {"id": "writer_b", "examples": [{"x": [0.0, 0.0, 0.0, 0.0], "label": 1}]},
        ],
    }


def test_load_prepartitioned(tmp_path):
    path = tmp_path / "users.json"
    path.write_text(json.dumps(valid_doc()))
    clients = load_prepartitioned(path)
    assert [c.source_id for c in clients] == ["writer_a", "writer_b"]
    assert clients[0].n_k == 2 and clients[0].test.size == 1
    assert clients[1].n_k == 1 and clients[1].test.size == 0
    assert clients[0].train.images.shape == (2, 2, 2, 1)
    # last example in file order is the held-out test example
    np.testing.assert_array_equal(clients[0].test.labels, [1])


def test_load_prepartitioned_duplicate_id(tmp_path):
    doc = valid_doc()
    doc["clients"][1]["id"] = "writer_a"
    path = tmp_path / "users.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match=r"clients\[1\].id"):
        load_prepartitioned(path)


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("shape"), "shape"),
        (lambda d: d.update(extra=1), "$"),
        (lambda d: d["clients"][0]["examples"][1].update(label=7), r"clients\[0\].examples\[1\].label"),
        (lambda d: d["clients"][0]["examples"][0].update(x=[0.5]), r"clients\[0\].examples\[0\].x"),
        (lambda d: d["clients"][0].update(examples=[]), r"clients\[0\].examples"),
    ],
)
def test_load_prepartitioned_schema_errors(tmp_path, mutate, field):
    doc = valid_doc()
    mutate(doc)
    path = tmp_path / "users.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match=field):
        load_prepartitioned(path)


def test_load_prepartitioned_many_uneven_users(tmp_path):
    # the natural-partition shape: hundreds of users with uneven sample counts
    rng = np.random.default_rng(9)
    sizes = rng.integers(12, 387, size=367)
    sizes[0], sizes[-1] = 12, 386
    doc = {
        "class_count": 62,
        "shape": [2, 2, 1],
        "clients": [
            {
                "id": f"writer_{u}",
                "examples": [
                    {"x": rng.random(4).round(6).tolist(), "label": int(rng.integers(0, 62))}
                    for _ in range(sizes[u])
                ],
            }
            for u in range(367)
        ],
    }
    path = tmp_path / "users.json"
    path.write_text(json.dumps(doc))
    clients = load_prepartitioned(path)
    assert len(clients) == 367
    totals = [c.train.size + c.test.size for c in clients]
    np.testing.assert_array_equal(totals, sizes)
    assert min(totals) == 12 and max(totals) == 386
    assert all(c.test.size == max(1, n // 6) for c, n in zip(clients, sizes))


def test_client_dataset_requires_training_data():
    empty = LabelledDataset(np.zeros((0, 1, 1, 1)), np.zeros(0, dtype=int), 2)
    one = LabelledDataset(np.zeros((1, 1, 1, 1)), np.zeros(1, dtype=int), 2)
    from flhc.data import ClientDataset

    with pytest.raises(DatasetError):
        ClientDataset(0, empty, one)
