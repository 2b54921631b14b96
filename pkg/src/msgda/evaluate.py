"""Inference-time refinement, detection metrics, and the task-suite harness."""
from __future__ import annotations

import dataclasses
import json

import numpy as np
from scipy.stats import rankdata

from .autodiff import Tape
from .graph import DomainSet, Graph, full_subbatch
from .model import ModelParams, class_probabilities, classify, gcn_forward, normalized_adjacency
from .synth import SuiteSpec, generate_suite
from .topology import label_homophily
from .train import (StructData, TrainConfig, forward_pass, prepare_structures,
                    stack_source_batches, train)
from . import graph as graphlib


def heterophily_scores(graph: Graph) -> np.ndarray:
    """Per-node 1 - cosine(own features, mean neighbor features), in [0, 2].

    Isolated nodes score 0. If either vector involved is zero the cosine is
    taken as 0, giving score 1.
    """
    feats = graph.features
    scores = np.zeros(graph.num_nodes)
    for v in range(graph.num_nodes):
        nbrs = graph.neighbors(v)
        if len(nbrs) == 0:
            continue
        mean = feats[nbrs].mean(axis=0)
        a, b = np.linalg.norm(feats[v]), np.linalg.norm(mean)
        cos = 0.0 if a == 0 or b == 0 else float(feats[v] @ mean / (a * b))
        scores[v] = 1.0 - cos
    return scores


def heterophily_score(graph: Graph, node: int) -> float:
    return float(heterophily_scores(graph)[node])


def refine(probabilities: np.ndarray, raw_scores: np.ndarray, lam: float,
           normalize: bool = True) -> np.ndarray:
    """Convex mix of bot probability and heterophily score.

    Raw scores are min-max normalized over the target graph first (constant
    score vectors map to all 0.5). ``normalize=False`` mixes raw scores, kept
    for comparison only.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    probabilities = np.asarray(probabilities, dtype=np.float64)
    scores = np.asarray(raw_scores, dtype=np.float64)
    if normalize:
        lo, hi = scores.min(), scores.max()
        if hi > lo:
            scores = (scores - lo) / (hi - lo)
        else:
            scores = np.full_like(scores, 0.5)
    return lam * probabilities + (1.0 - lam) * scores


@dataclasses.dataclass(frozen=True, eq=False)
class Prediction:
    """Per-target-node outputs of the inference stage."""

    probabilities: np.ndarray   # classifier bot probability
    raw_scores: np.ndarray      # heterophily scores in [0, 2]
    refined: np.ndarray         # convex mix in [0, 1]
    hard: np.ndarray            # refined >= 0.5


@dataclasses.dataclass(frozen=True)
class EvalResult:
    f1: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int


def confusion(labels: np.ndarray, hard: np.ndarray) -> tuple[int, int, int, int]:
    labels = np.asarray(labels)
    hard = np.asarray(hard)
    tp = int(np.sum((labels == 1) & (hard == 1)))
    fp = int(np.sum((labels == 0) & (hard == 1)))
    tn = int(np.sum((labels == 0) & (hard == 0)))
    fn = int(np.sum((labels == 1) & (hard == 0)))
    return tp, fp, tn, fn


def f1(labels: np.ndarray, hard: np.ndarray) -> float:
    """F1 with bots (label 1) as the positive class; 0 when degenerate."""
    tp, fp, _, fn = confusion(labels, hard)
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def auc_roc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-statistic AUC; tied scores get midranks."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def target_bot_probabilities(target: Graph, params: ModelParams) -> np.ndarray:
    """Classifier bot probability for every target node (in-domain channel only)."""
    tape = Tape()
    z = gcn_forward(tape, normalized_adjacency(target),
                    tape.constant(target.features), params)
    probs = class_probabilities(tape, classify(tape, z, params))
    return probs.value[:, 1].copy()


def predict_target(domain_set: DomainSet, params: ModelParams,
                   config: TrainConfig, lam: float | None = None) -> Prediction:
    """Inference on the target graph; touches no labels."""
    lam = config.effective_lambda if lam is None else lam
    probs = target_bot_probabilities(domain_set.target, params)
    raw = heterophily_scores(domain_set.target)
    refined = refine(probs, raw, lam)
    return Prediction(probabilities=probs, raw_scores=raw, refined=refined,
                      hard=(refined >= 0.5).astype(np.int64))


def evaluate_target(domain_set: DomainSet, params: ModelParams,
                    config: TrainConfig, lam: float | None = None) -> EvalResult:
    """Refined predictions on the target graph scored against hidden labels."""
    pred = predict_target(domain_set, params, config, lam)
    labels = domain_set.target_eval_labels()
    tp, fp, tn, fn = confusion(labels, pred.hard)
    return EvalResult(f1=f1(labels, pred.hard), auc=auc_roc(labels, pred.refined),
                      tp=tp, fp=fp, tn=tn, fn=fn)


def measure_csd_homophily(domain_set: DomainSet, params: ModelParams,
                          config: TrainConfig, structs: StructData) -> tuple[float, float]:
    """(cross-domain edge label homophily, mean in-domain edge homophily).

    The cross-domain ratio is measured on the full-graph topology built from
    current embeddings, against true classes.
    """
    stack = stack_source_batches(
        [full_subbatch(g) for g in domain_set.sources],
        signatures=structs.signatures if config.uses_edge_weights else None,
    )
    tape = Tape()
    result = forward_pass(tape, params, stack, full_subbatch(domain_set.target), config)
    if result.topology is None:
        raise ValueError("variant builds no cross-domain topology")
    classes = np.concatenate([
        g.true_labels if g.true_labels is not None else g.labels
        for g in domain_set.sources
    ])
    csd_ratio = label_homophily(result.topology, classes)
    in_domain = float(np.mean([
        graphlib.edge_homophily(g, g.true_labels if g.true_labels is not None else g.labels)
        for g in domain_set.sources
    ]))
    return csd_ratio, in_domain


# ---------------------------------------------------------------------------
# High-m / Low-m task harness
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class TaskRow:
    task: str
    seed: int
    m: int
    mode: str
    f1: float
    auc: float


@dataclasses.dataclass
class MetricReport:
    rows: list

    def aggregate(self) -> dict:
        out: dict = {}
        for mode in ("high", "low"):
            f1s = [r.f1 for r in self.rows if r.mode == mode]
            aucs = [r.auc for r in self.rows if r.mode == mode]
            if f1s:
                out[mode] = {
                    "f1_mean": float(np.mean(f1s)), "f1_std": float(np.std(f1s)),
                    "auc_mean": float(np.mean(aucs)), "auc_std": float(np.std(aucs)),
                }
        return out

    def write_csv(self, path) -> None:
        lines = ["task,seed,m,mode,f1,auc"]
        for r in self.rows:
            lines.append(f"{r.task},{r.seed},{r.m},{r.mode},{r.f1!r},{r.auc!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.aggregate(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def subset_domain_set(domain_set: DomainSet, picks) -> DomainSet:
    return DomainSet(sources=tuple(domain_set.sources[k] for k in picks),
                     target=domain_set.target)


def run_task_suite(suite_spec: SuiteSpec, m: int, config: TrainConfig,
                   seeds) -> MetricReport:
    """Train and evaluate the High-m and Low-m transfer tasks over seeds.

    High-m uses the m sources nearest the target in the shift schedule, Low-m
    the m farthest; the suite must provide at least 2m sources.
    """
    if len(suite_spec.sources) < 2 * m:
        raise ValueError(f"need at least {2 * m} sources for High/Low-{m} tasks")
    rows = []
    for seed in seeds:
        suite = generate_suite(dataclasses.replace(suite_spec, rng_seed=seed))
        for mode in ("high", "low"):
            picks = range(m) if mode == "high" else range(suite.m - m, suite.m)
            subset = subset_domain_set(suite, picks)
            cfg = dataclasses.replace(config, rng_seed=seed)
            structs = prepare_structures(subset, cfg)
            params, _ = train(subset, cfg, structs)
            result = evaluate_target(subset, params, cfg)
            rows.append(TaskRow(task=f"{mode}-{m}", seed=seed, m=m, mode=mode,
                                f1=result.f1, auc=result.auc))
    return MetricReport(rows)
