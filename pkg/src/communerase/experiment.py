"""End-to-end experiment harness: deploy, evaluate, unlearn, re-evaluate.

Deployment (community detection + mapping + initial training) and the
unlearning stage (influence + local recomputation + retraining) are timed
separately on a monotonic clock; metric evaluation runs outside both timers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .community import CommunityPartition, global_density, louvain, refine
from .config import RunConfig
from .errors import ParameterError
from .gnn import Hyper, TrainedModel, predict_many, train
from .graph import Graph, Split, induced_subgraph, split_nodes
from .mapping import MapConfig, MappedGraph, MappingTables, build_mapped_graph
from .metrics import attack_score, info_retention, macro_f1, mean_conductance, mia_auc
from .unlearn import UnlearnRequest, unlearn


@dataclass(frozen=True)
class EvalReport:
    macro_f1: float
    post_unlearn_macro_f1: float
    mia_auc: float
    info_retention: float
    mean_conductance: float
    deploy_seconds: float
    unlearn_seconds: float
    mapped_nodes: int
    original_nodes: int
    victim_count: int
    backbone: str
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("macro_f1", "mia_auc"):
            value = getattr(self, name)
            if not (np.isnan(value) or 0.0 <= value <= 1.0):
                raise ParameterError(f"{name} outside [0,1]: {value}")
        if not (np.isnan(self.info_retention) or -1.0 <= self.info_retention <= 1.0 + 1e-9):
            raise ParameterError("info_retention outside [-1,1]")
        if self.deploy_seconds < 0 or self.unlearn_seconds < 0:
            raise ParameterError("negative timing")


@dataclass
class RunResult:
    report: EvalReport
    split: Split
    partition: CommunityPartition
    mapped: MappedGraph
    tables: MappingTables
    model: TrainedModel
    mapped_after: MappedGraph
    tables_after: MappingTables
    model_after: TrainedModel
    victims: tuple[int, ...]


def map_config(cfg: RunConfig) -> MapConfig:
    return MapConfig(
        variance_ratio=cfg.variance_ratio,
        smoothing_scale=cfg.smoothing_scale,
        smoothing_shift=cfg.smoothing_shift,
        edge_threshold=cfg.edge_threshold,
        invert_edge_weight=cfg.invert_edge_weight,
    )


def hyper_of(cfg: RunConfig) -> Hyper:
    return Hyper(hidden=cfg.hidden, learning_rate=cfg.learning_rate,
                 weight_decay=cfg.weight_decay, epochs=cfg.epochs)


def detect_communities(g: Graph, cfg: RunConfig) -> CommunityPartition:
    p = louvain(g, seed=cfg.seed, max_passes=cfg.louvain_passes)
    null_p = cfg.null_p if cfg.null_p > 0 else None
    return refine(
        g, p,
        alpha=cfg.alpha,
        conductance_quantile=cfg.conductance_quantile,
        null_p=null_p,
        seed=cfg.seed,
        max_sweeps=cfg.refine_sweeps,
        louvain_passes=cfg.louvain_passes,
    )


def sample_victims(g: Graph, split: Split, cfg: RunConfig) -> tuple[int, ...]:
    """Deletion batch: a fixed fraction of the dataset, drawn from train nodes."""
    count = max(1, int(round(cfg.unlearn_fraction * g.node_count)))
    count = min(count, len(split.train))
    rng = np.random.default_rng([cfg.seed & 0x7FFFFFFF, 3])
    chosen = rng.choice(split.train, size=count, replace=False)
    return tuple(sorted(int(v) for v in chosen))


def _utility(g, tables, mapped, model, test_ids) -> float:
    preds = predict_many(g, tables, mapped, model, test_ids)
    labels = [g.label_of(int(v)) for v in test_ids]
    return macro_f1([p.label for p in preds], labels)


def run_experiment(g: Graph, cfg: RunConfig) -> RunResult:
    """Full protocol on one graph; deterministic apart from the timing fields."""
    split = split_nodes(g, cfg.train_fraction, cfg.seed)
    hyper = hyper_of(cfg)

    t0 = time.perf_counter()
    g_train = induced_subgraph(g, split.train)
    partition = detect_communities(g_train, cfg)
    mapped, tables = build_mapped_graph(g_train, partition, map_config(cfg))
    model = train(mapped, cfg.backbone, hyper, seed=cfg.seed, num_classes=g.num_classes)
    deploy_seconds = time.perf_counter() - t0

    utility = _utility(g, tables, mapped, model, split.test) if cfg.with_utility else float("nan")

    victims = sample_victims(g, split, cfg)
    t1 = time.perf_counter()
    request = UnlearnRequest(victims, strict_feature_update=cfg.strict_unlearn)
    mapped_after, tables_after, _ = unlearn(g_train, mapped, tables, request)
    if cfg.skip_retrain:
        model_after = model
    else:
        model_after = train(mapped_after, cfg.backbone, hyper, seed=cfg.seed,
                            num_classes=g.num_classes)
    unlearn_seconds = time.perf_counter() - t1

    post_utility = (_utility(g, tables_after, mapped_after, model_after, split.test)
                    if cfg.with_utility else float("nan"))

    member_preds = predict_many(g, tables_after, mapped_after, model_after, victims)
    nonmember_preds = predict_many(g, tables_after, mapped_after, model_after, split.test)
    auc = mia_auc([attack_score(p.probs) for p in member_preds],
                  [attack_score(p.probs) for p in nonmember_preds])

    communities = [partition.communities[c] for c in sorted(partition.communities)]
    retention = (info_retention(g_train, communities, seed=cfg.seed)
                 if cfg.with_info_retention else float("nan"))
    conduct = mean_conductance(g_train, partition)

    report = EvalReport(
        macro_f1=utility,
        post_unlearn_macro_f1=post_utility,
        mia_auc=auc,
        info_retention=retention,
        mean_conductance=conduct,
        deploy_seconds=deploy_seconds,
        unlearn_seconds=unlearn_seconds,
        mapped_nodes=mapped.node_count,
        original_nodes=g.node_count,
        victim_count=len(victims),
        backbone=cfg.backbone,
        seed=cfg.seed,
        config=cfg.to_dict(),
    )
    return RunResult(report=report, split=split, partition=partition, mapped=mapped,
                     tables=tables, model=model, mapped_after=mapped_after,
                     tables_after=tables_after, model_after=model_after, victims=victims)


# -- report output --------------------------------------------------------------------

_CSV_FIELDS = [
    "seed", "backbone", "macro_f1", "post_unlearn_macro_f1", "mia_auc",
    "info_retention", "mean_conductance", "deploy_seconds", "unlearn_seconds",
    "mapped_nodes", "original_nodes", "victim_count",
]


def report_csv_header() -> str:
    return ",".join(_CSV_FIELDS)


def report_csv_row(report: EvalReport) -> str:
    values = []
    for name in _CSV_FIELDS:
        value = getattr(report, name)
        values.append(f"{value:.6g}" if isinstance(value, float) else str(value))
    return ",".join(values)


def write_report_csv(reports: list[EvalReport], path: str | Path) -> None:
    lines = [report_csv_header()] + [report_csv_row(r) for r in reports]
    Path(path).write_text("\n".join(lines) + "\n")


PLOT_SCRIPT = """\
#!/usr/bin/env python3
# Plot utility/efficiency columns from a report.csv produced by the eval stage.
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "report.csv"
rows = list(csv.DictReader(open(path)))
seeds = [int(r["seed"]) for r in rows]
fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
axes[0].bar(seeds, [float(r["macro_f1"]) for r in rows])
axes[0].set_title("Macro F1")
axes[1].bar(seeds, [float(r["mia_auc"]) for r in rows])
axes[1].axhline(0.5, color="k", ls="--", lw=0.8)
axes[1].set_title("Post-unlearning attack AUC")
axes[2].bar(seeds, [float(r["deploy_seconds"]) for r in rows], label="deploy")
axes[2].bar(seeds, [float(r["unlearn_seconds"]) for r in rows], label="unlearn")
axes[2].legend()
axes[2].set_title("Stage seconds")
for ax in axes:
    ax.set_xlabel("seed")
fig.tight_layout()
fig.savefig("report.png", dpi=150)
print("wrote report.png")
"""


def write_plot_script(path: str | Path) -> None:
    Path(path).write_text(PLOT_SCRIPT)
