"""Experiment configuration files: strict JSON parsing and sweep expansion.

The file carries exactly the experiment's fields plus a dataset source and an
optional sweep block. Unknown keys anywhere are an error, so a typo in a sweep
axis cannot silently fall through to defaults.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path

from . import data as data_mod
from .clustering import ClusteringConfig
from .data import PartitionScheme
from .experiment import ExperimentConfig
from .fedavg import TrainingHyperparams
from .model import ModelSpec

DEFAULT_SWEEP_CAP = 64
FAST_DATASET_CAP = 2000
FAST_HIDDEN_UNITS = 64


class ConfigError(Exception):
    """Configuration file problem; the message names the offending key."""


_TOP_KEYS = {
    "dataset",
    "partition",
    "model",
    "hp",
    "rounds_before_cluster",
    "total_rounds",
    "clustering",
    "target_accuracy",
    "baseline_mode",
    "experiment_seed",
    "weight_by_samples",
    "sweep",
}
_REQUIRED_KEYS = {"dataset", "partition", "model", "hp", "rounds_before_cluster"}

_SECTION_KEYS = {
    "dataset": {"images", "labels", "prepartitioned"},
    "partition": {"kind", "num_clients", "labels_per_client", "swap_groups", "seed"},
    "model": {"architecture", "input_shape", "num_classes", "hidden_units"},
    "hp": {"local_epochs", "batch_size", "learning_rate", "client_fraction"},
    "clustering": {"metric", "linkage", "threshold"},
    "sweep": {"axes", "max_runs"},
}


@dataclass(frozen=True)
class DatasetSource:
    """Where the raw examples come from: an IDX pair or a pre-partitioned export."""

    kind: str  # "idx" | "prepartitioned"
    images: Path | None = None
    labels: Path | None = None
    prepartitioned: Path | None = None


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config top level must be an object")
    return doc


def _check_keys(doc: dict) -> None:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    missing = _REQUIRED_KEYS - set(doc)
    if missing:
        raise ConfigError(f"missing required config key {sorted(missing)[0]!r}")
    for section, allowed in _SECTION_KEYS.items():
        if section not in doc:
            continue
        value = doc[section]
        if not isinstance(value, dict):
            raise ConfigError(f"config key {section!r} must be an object")
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"unknown config key '{section}.{sorted(unknown)[0]}'")


def _dataset_source(section: dict, base_dir: Path) -> DatasetSource:
    def resolve(raw: str) -> Path:
        path = Path(raw)
        if path.is_absolute():
            return path
        local = base_dir / path
        if local.exists():
            return local
        env = os.environ.get("FLHC_DATA_DIR")
        if env and (Path(env) / path).exists():
            return Path(env) / path
        return local

    if "prepartitioned" in section:
        if "images" in section or "labels" in section:
            raise ConfigError("dataset: give either 'prepartitioned' or 'images'+'labels'")
        return DatasetSource("prepartitioned", prepartitioned=resolve(section["prepartitioned"]))
    if "images" not in section or "labels" not in section:
        raise ConfigError("dataset: needs both 'images' and 'labels' (or 'prepartitioned')")
    return DatasetSource("idx", images=resolve(section["images"]), labels=resolve(section["labels"]))


def parse_config(doc: dict, base_dir: Path) -> tuple[DatasetSource, ExperimentConfig]:
    """Validate the resolved document and build the typed configuration."""
    _check_keys(doc)
    try:
        source = _dataset_source(doc["dataset"], base_dir)
        partition = PartitionScheme(**doc["partition"])
        model = ModelSpec(**{**doc["model"], "input_shape": tuple(doc["model"].get("input_shape", (28, 28, 1)))})
        hp = TrainingHyperparams(**doc["hp"])
        clustering = ClusteringConfig(**doc["clustering"]) if "clustering" in doc else None
        cfg = ExperimentConfig(
            partition=partition,
            model=model,
            hp=hp,
            rounds_before_cluster=doc["rounds_before_cluster"],
            clustering=clustering,
            total_rounds=doc.get("total_rounds", 50),
            target_accuracy=doc.get("target_accuracy", 0.99),
            baseline_mode=doc.get("baseline_mode", False),
            experiment_seed=doc.get("experiment_seed", 0),
            weight_by_samples=doc.get("weight_by_samples", False),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    if (partition.kind == data_mod.PREPARTITIONED) != (source.kind == "prepartitioned"):
        raise ConfigError("partition kind and dataset source disagree about pre-partitioned data")
    return source, cfg


def apply_fast_mode(doc: dict) -> dict:
    """Swap the model for the small MLP; the caller also caps the dataset size."""
    doc = json.loads(json.dumps(doc))
    model = doc.get("model", {})
    model["architecture"] = "fast_mlp"
    model.setdefault("hidden_units", FAST_HIDDEN_UNITS)
    doc["model"] = model
    return doc


def _set_path(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"sweep axis {dotted!r} does not name an existing config field")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"sweep axis {dotted!r} does not name an existing config field")
    node[parts[-1]] = value


def expand_sweep(doc: dict) -> list[dict]:
    """Resolve the sweep block into one plain config document per combination.

    Axis keys are dotted paths into the document and must name fields that are
    present in the base config; the cross product is capped by max_runs.
    """
    if "sweep" not in doc:
        return [doc]
    sweep = doc["sweep"]
    axes = sweep.get("axes")
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("sweep.axes must be a non-empty object")
    cap = sweep.get("max_runs", DEFAULT_SWEEP_CAP)
    keys = sorted(axes)
    values = []
    for key in keys:
        if not isinstance(axes[key], list) or not axes[key]:
            raise ConfigError(f"sweep axis {key!r} must list at least one value")
        values.append(axes[key])
    total = 1
    for v in values:
        total *= len(v)
    if total > cap:
        raise ConfigError(f"sweep would expand to {total} runs, above the cap of {cap}")

    base = {k: v for k, v in doc.items() if k != "sweep"}
    out = []
    for combo in itertools.product(*values):
        resolved = json.loads(json.dumps(base))
        for key, value in zip(keys, combo):
            _set_path(resolved, key, value)
        out.append(resolved)
    return out


def config_hash(doc: dict) -> str:
    """Stable short hash of a resolved config, ignoring the seed."""
    scrubbed = {k: v for k, v in doc.items() if k != "experiment_seed"}
    return hashlib.sha256(json.dumps(scrubbed, sort_keys=True).encode()).hexdigest()[:12]


def load_clients(source: DatasetSource, cfg: ExperimentConfig, fast_cap: int | None = None):
    """Materialise the client datasets for one run."""
    if source.kind == "prepartitioned":
        return data_mod.load_prepartitioned(source.prepartitioned)
    for path in (source.images, source.labels):
        if not path.exists():
            raise data_mod.DatasetError(f"dataset file not found: {path}")
    dataset = data_mod.load_idx(source.images, source.labels)
    if fast_cap is not None and dataset.size > fast_cap:
        dataset = dataset.subset(range(fast_cap))
    return data_mod.partition(dataset, cfg.partition, default_seed=cfg.experiment_seed)
