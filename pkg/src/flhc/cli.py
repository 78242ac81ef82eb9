"""Command-line entry point: run experiments or describe what a config would do.

Exit codes: 0 success, 2 configuration error, 3 dataset error, 1 anything else
(including an output-directory collision, which is reported, never clobbered).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from .clustering import save_dendrogram
from .config import ConfigError, DatasetSource, FAST_DATASET_CAP
from .experiment import run_experiment
from .metrics import write_clusters_csv, write_csv
from .model import Model

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flhc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment(s) described by a config file")
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--out", default="runs", help="output root directory (default: runs)")
    run.add_argument("--baseline-only", action="store_true", help="plain federated training, no clustering")
    run.add_argument("--fast", action="store_true", help="swap in the small MLP and cap the dataset")
    run.add_argument("--seed", type=int, default=None, help="override the config's experiment seed")
    run.add_argument("--jobs", type=int, default=1, help="worker threads for client updates within a round")
    run.add_argument("--sweep-jobs", type=int, default=1, help="sweep runs to execute in parallel")

    describe = sub.add_parser("describe", help="print the run plan without training")
    describe.add_argument("--config", required=True, help="path to the JSON config")
    describe.add_argument("--fast", action="store_true", help="describe the --fast variant")
    return parser


def _resolved_docs(args) -> list[dict]:
    doc = config_mod.load_config_file(args.config)
    if getattr(args, "seed", None) is not None:
        doc["experiment_seed"] = args.seed
    if getattr(args, "baseline_only", False):
        doc["baseline_mode"] = True
        doc.pop("clustering", None)
    docs = config_mod.expand_sweep(doc)
    if args.fast:
        docs = [config_mod.apply_fast_mode(d) for d in docs]
    return docs


def _run_one(doc: dict, base_dir: str, out_root: str, jobs: int, fast: bool) -> dict:
    source, cfg = config_mod.parse_config(doc, Path(base_dir))
    clients = config_mod.load_clients(source, cfg, fast_cap=FAST_DATASET_CAP if fast else None)

    run_dir = Path(out_root) / f"{config_mod.config_hash(doc)}-seed{cfg.experiment_seed}"
    if run_dir.exists():
        raise FileExistsError(f"output directory {run_dir} already exists; refusing to overwrite")
    run_dir.mkdir(parents=True)

    result = run_experiment(cfg, clients, jobs=jobs)
    write_csv(result.rounds, run_dir / "metrics.csv", config=doc)
    if result.cluster_state is not None:
        write_clusters_csv(result.rounds, run_dir / "clusters.csv")
        save_dendrogram(result.dendrogram, run_dir / "dendrogram.json")
        (run_dir / "clusters.json").write_text(
            json.dumps([list(members) for members in result.clusters], indent=2)
        )

    final = result.rounds[-1]
    return {
        "dir": str(run_dir),
        "seed": cfg.experiment_seed,
        "final_accuracy": final.mean_test_accuracy,
        "final_pct_at_target": final.pct_clients_at_target,
        "num_clusters": final.num_clusters,
    }


def _cmd_run(args) -> int:
    docs = _resolved_docs(args)
    base_dir = str(Path(args.config).resolve().parent)
    print(f"{len(docs)} run(s) planned")
    summaries = []
    if args.sweep_jobs > 1 and len(docs) > 1:
        with ProcessPoolExecutor(max_workers=args.sweep_jobs) as pool:
            futures = [
                pool.submit(_run_one, doc, base_dir, args.out, args.jobs, args.fast)
                for doc in docs
            ]
            summaries = [f.result() for f in futures]
    else:
        for doc in docs:
            summaries.append(_run_one(doc, base_dir, args.out, args.jobs, args.fast))
    for s in summaries:
        print(
            f"{s['dir']}: seed={s['seed']} clusters={s['num_clusters']} "
            f"final_acc={s['final_accuracy']:.4f} pct_at_target={s['final_pct_at_target']:.1f}"
        )
    return EXIT_OK


def _describe_partition(doc: dict, source: DatasetSource, cfg) -> list[str]:
    scheme = cfg.partition
    if source.kind == "prepartitioned":
        clients = data_mod.load_prepartitioned(source.prepartitioned)
        sizes = [c.n_k for c in clients]
        return [
            f"partition: pre-partitioned, {len(clients)} clients, "
            f"n_k in [{min(sizes)}, {max(sizes)}]"
        ]
    for path in (source.images, source.labels):
        if not path.exists():
            raise data_mod.DatasetError(f"dataset file not found: {path}")
    dataset = data_mod.load_idx(source.images, source.labels)
    size = dataset.size
    lines = [f"dataset: {size} examples, {dataset.class_count} classes"]
    if scheme.kind == data_mod.IID:
        alloc = size // scheme.num_clients
    elif scheme.kind == data_mod.PATHOLOGICAL:
        counts = np.bincount(dataset.labels, minlength=dataset.class_count)
        shard = data_mod._pathological_shard_size(counts, scheme.num_clients * scheme.labels_per_client)
        alloc = shard * scheme.labels_per_client
    else:
        alloc = size // scheme.num_clients
    train, test = data_mod.holdout_sizes(alloc)
    lines.append(
        f"partition: {scheme.kind}, {scheme.num_clients} clients x {train} train / {test} test"
    )
    return lines


def _cmd_describe(args) -> int:
    docs = _resolved_docs(args)
    base_dir = Path(args.config).resolve().parent
    for i, doc in enumerate(docs):
        source, cfg = config_mod.parse_config(doc, base_dir)
        print(f"-- plan {i + 1}/{len(docs)}")
        for line in _describe_partition(doc, source, cfg):
            print(line)
        model = Model(cfg.model)
        print(f"model: {cfg.model.architecture}, {model.num_parameters:,} parameters")
        if cfg.baseline_mode:
            print(f"rounds: {cfg.total_rounds} plain federated rounds (baseline mode)")
        else:
            print(
                f"rounds: {cfg.rounds_before_cluster} before clustering, "
                f"{cfg.total_rounds} total; clustering {cfg.clustering.metric}/"
                f"{cfg.clustering.linkage} at threshold {cfg.clustering.threshold}"
            )
        print(f"target accuracy: {cfg.target_accuracy}, seed: {cfg.experiment_seed}")
    if len(docs) > 1:
        print(f"sweep: {len(docs)} runs")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_describe(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except data_mod.DatasetError as err:
        print(f"dataset error: {err}", file=sys.stderr)
        return EXIT_DATA
    except FileExistsError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
