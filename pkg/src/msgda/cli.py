"""Command-line pipeline: generate, orbits, train, evaluate, ablate.

Stages communicate through files inside the configured output directory and
skip themselves when their content-hashed inputs are unchanged, so `ablate`
reuses generation and orbit work across variants and seeds.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import graphlets
from .config import ExperimentConfig, load_config
from .errors import ConfigError, ContractViolation, NumericError, StageError
from .evaluate import evaluate_target
from .graph import DomainSet, load_graph, save_graph
from .model import load_params, save_params
from .synth import generate_suite
from .train import StructData, TrainConfig, VARIANTS, domain_similarity, train

logger = logging.getLogger(__name__)

CODE_VERSION = "msgda-0.1.0"


def _suite_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / f"suite_s{seed}"


def _graph_paths(cfg: ExperimentConfig, seed: int) -> tuple[list[Path], Path]:
    base = _suite_dir(cfg, seed)
    sources = [base / f"source_{k:02d}.graph" for k in range(len(cfg.suite.sources))]
    return sources, base / "target.graph"


class Manifest:
    """Run log: config hash, code version, stage timings, artifact paths."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.data = {
            "command": command,
            "config_hash": cfg.config_hash(),
            "code_version": CODE_VERSION,
            "stages": {},
            "artifacts": [],
        }

    def stage(self, name: str, seconds: float, **info) -> None:
        self.data["stages"][name] = {"seconds": round(seconds, 3), **info}

    def artifact(self, path) -> None:
        self.data["artifacts"].append(str(path))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _stage_generate(cfg: ExperimentConfig, seed: int, manifest: Manifest) -> None:
    base = _suite_dir(cfg, seed)
    base.mkdir(parents=True, exist_ok=True)
    meta_path = base / "suite.json"
    suite_spec = dataclasses.replace(cfg.suite, rng_seed=seed)
    spec_hash = cfg.config_hash() + f":{seed}"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
            if meta.get("spec_hash") == spec_hash:
                logger.info("generate: suite for seed %d up to date, skipped", seed)
                manifest.stage(f"generate_s{seed}", 0.0, skipped=True)
                return
        except json.JSONDecodeError:
            pass
    started = time.perf_counter()
    suite = generate_suite(suite_spec)
    src_paths, tgt_path = _graph_paths(cfg, seed)
    for g, path in zip(suite.sources, src_paths):
        save_graph(g, path)
        manifest.artifact(path)
    save_graph(suite.target, tgt_path)
    manifest.artifact(tgt_path)
    meta = {
        "spec_hash": spec_hash,
        "sources": [p.name for p in src_paths],
        "target": tgt_path.name,
        "hashes": {p.name: graphlets.graph_file_hash(p)
                   for p in src_paths + [tgt_path]},
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    manifest.artifact(meta_path)
    manifest.stage(f"generate_s{seed}", time.perf_counter() - started, skipped=False)


def _load_suite(cfg: ExperimentConfig, seed: int) -> DomainSet:
    src_paths, tgt_path = _graph_paths(cfg, seed)
    for p in src_paths + [tgt_path]:
        if not p.exists():
            raise StageError(f"missing graph file {p}; run `generate` first")
    sources = tuple(load_graph(p, domain_id=k) for k, p in enumerate(src_paths))
    tgt = load_graph(tgt_path, domain_id=len(sources))
    # target labels in the file are evaluation-only; hide them from training
    tgt = dataclasses.replace(tgt, true_labels=tgt.labels, labels=None)
    return DomainSet(sources=sources, target=tgt)


def _stage_orbits(cfg: ExperimentConfig, seed: int, manifest: Manifest) -> None:
    src_paths, tgt_path = _graph_paths(cfg, seed)
    started = time.perf_counter()
    computed = 0
    for path in src_paths + [tgt_path]:
        if not path.exists():
            raise StageError(f"missing graph file {path}; run `generate` first")
        ghash = graphlets.graph_file_hash(path)
        gdv_path = path.with_suffix(".gdv")
        sig_path = path.with_suffix(".sig")
        cached = graphlets.load_signatures(sig_path, ghash)
        if cached is not None and gdv_path.exists():
            logger.info("orbits: cache hit for %s, skipped", path.name)
            continue
        if sig_path.exists() and cached is None:
            logger.warning("orbits: stale or corrupt cache for %s, recomputing",
                           path.name)
        g = load_graph(path)
        graphlets.save_gdv(gdv_path, graphlets.count_orbits(g))
        graphlets.save_signatures(sig_path, graphlets.ego_signatures(g), ghash)
        manifest.artifact(gdv_path)
        manifest.artifact(sig_path)
        computed += 1
    manifest.stage(f"orbits_s{seed}", time.perf_counter() - started,
                   computed=computed)


def _load_structures(cfg: ExperimentConfig, seed: int,
                     train_cfg: TrainConfig, suite: DomainSet) -> StructData:
    signatures = None
    if train_cfg.uses_edge_weights:
        src_paths, _ = _graph_paths(cfg, seed)
        sigs = []
        for path in src_paths:
            sig_path = path.with_suffix(".sig")
            cached = graphlets.load_signatures(sig_path, graphlets.graph_file_hash(path))
            if cached is None:
                raise StageError(f"missing signature cache {sig_path}; run `orbits` first")
            sigs.append(cached)
        signatures = tuple(sigs)
    weights = None
    if train_cfg.uses_smst:
        weights = np.array([domain_similarity(g, suite.target) for g in suite.sources])
    return StructData(signatures=signatures, structural_weights=weights)


def _run_paths(cfg: ExperimentConfig, variant: str, seed: int) -> dict:
    base = Path(cfg.out_dir)
    tag = f"{variant.replace('+', 'p').replace('-', '_')}_s{seed}"
    return {
        "checkpoint": base / f"params_{tag}.txt",
        "history": base / f"history_{tag}.csv",
        "metrics": base / f"metrics_{tag}.csv",
    }


def _stage_train(cfg: ExperimentConfig, variant: str, seed: int,
                 manifest: Manifest, trace_path: Path | None = None):
    suite = _load_suite(cfg, seed)
    train_cfg = dataclasses.replace(cfg.train, variant=variant, rng_seed=seed)
    structs = _load_structures(cfg, seed, train_cfg, suite)
    trace: list | None = [] if trace_path is not None else None
    started = time.perf_counter()
    params, history = train(suite, train_cfg, structs, trace=trace)
    paths = _run_paths(cfg, variant, seed)
    save_params(params, paths["checkpoint"])
    history.write_csv(paths["history"])
    manifest.artifact(paths["checkpoint"])
    manifest.artifact(paths["history"])
    if trace_path is not None:
        trace_path.write_text("\n".join(trace) + ("\n" if trace else ""))
        manifest.artifact(trace_path)
    manifest.stage(f"train_{variant}_s{seed}", time.perf_counter() - started,
                   csd_edges_traced=len(trace) if trace is not None else None,
                   csd_enabled=train_cfg.uses_csd)
    return suite, train_cfg, params


def _stage_evaluate(cfg: ExperimentConfig, variant: str, seed: int,
                    manifest: Manifest) -> dict:
    paths = _run_paths(cfg, variant, seed)
    if not paths["checkpoint"].exists():
        raise StageError(f"checkpoint not found: {paths['checkpoint']}")
    suite = _load_suite(cfg, seed)
    train_cfg = dataclasses.replace(cfg.train, variant=variant, rng_seed=seed)
    params = load_params(paths["checkpoint"])
    started = time.perf_counter()
    result = evaluate_target(suite, params, train_cfg)
    lines = ["variant,seed,f1,auc,tp,fp,tn,fn",
             f"{variant},{seed},{result.f1!r},{result.auc!r},"
             f"{result.tp},{result.fp},{result.tn},{result.fn}"]
    paths["metrics"].write_text("\n".join(lines) + "\n")
    manifest.artifact(paths["metrics"])
    manifest.stage(f"evaluate_{variant}_s{seed}", time.perf_counter() - started)
    return {"f1": result.f1, "auc": result.auc}


def cmd_generate(cfg: ExperimentConfig) -> int:
    manifest = Manifest(cfg, "generate")
    for seed in cfg.seeds:
        _stage_generate(cfg, seed, manifest)
    manifest.write(Path(cfg.out_dir) / "manifest_generate.json")
    return 0


def cmd_orbits(cfg: ExperimentConfig) -> int:
    manifest = Manifest(cfg, "orbits")
    for seed in cfg.seeds:
        _stage_orbits(cfg, seed, manifest)
    manifest.write(Path(cfg.out_dir) / "manifest_orbits.json")
    return 0


def cmd_train(cfg: ExperimentConfig, trace_topology: bool = False) -> int:
    manifest = Manifest(cfg, "train")
    seed = cfg.seeds[0]
    trace_path = (Path(cfg.out_dir) / f"topology_trace_s{seed}.txt"
                  if trace_topology else None)
    _stage_train(cfg, cfg.variant, seed, manifest, trace_path)
    manifest.write(Path(cfg.out_dir) / "manifest_train.json")
    return 0


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    manifest = Manifest(cfg, "evaluate")
    result = _stage_evaluate(cfg, cfg.variant, cfg.seeds[0], manifest)
    manifest.write(Path(cfg.out_dir) / "manifest_evaluate.json")
    print(f"f1={result['f1']:.4f} auc={result['auc']:.4f}")
    return 0


def cmd_ablate(cfg: ExperimentConfig) -> int:
    """Run the five-variant ladder over every seed and emit one table."""
    manifest = Manifest(cfg, "ablate")
    for seed in cfg.seeds:
        _stage_generate(cfg, seed, manifest)
        _stage_orbits(cfg, seed, manifest)
    rows = []
    for variant in VARIANTS:
        for seed in cfg.seeds:
            _stage_train(cfg, variant, seed, manifest)
            result = _stage_evaluate(cfg, variant, seed, manifest)
            rows.append((variant, seed, result["f1"], result["auc"]))
    out = Path(cfg.out_dir)
    detail = ["variant,seed,f1,auc"]
    detail += [f"{v},{s},{f!r},{a!r}" for v, s, f, a in rows]
    (out / "ablation.csv").write_text("\n".join(detail) + "\n")
    summary = ["variant,f1_mean,f1_std,auc_mean,auc_std"]
    for variant in VARIANTS:
        f1s = np.array([f for v, _, f, _ in rows if v == variant])
        aucs = np.array([a for v, _, _, a in rows if v == variant])
        summary.append(f"{variant},{f1s.mean()!r},{f1s.std()!r},"
                       f"{aucs.mean()!r},{aucs.std()!r}")
    (out / "ablation_summary.csv").write_text("\n".join(summary) + "\n")
    manifest.artifact(out / "ablation.csv")
    manifest.artifact(out / "ablation_summary.csv")
    manifest.write(out / "manifest_ablate.json")
    return 0


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    if getattr(args, "variant", None) is not None:
        if args.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown variant {args.variant!r}")
        cfg = dataclasses.replace(cfg, variant=args.variant)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msgda",
        description="Multi-source graph domain adaptation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "orbits", "train", "evaluate", "ablate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override seed list")
        p.add_argument("--out", default=None, help="override output directory")
        if name in ("train", "evaluate"):
            p.add_argument("--variant", default=None, choices=VARIANTS)
        if name == "train":
            p.add_argument("--trace-topology", action="store_true",
                           help="dump per-batch cross-domain edge lists")
    return parser


_ERROR_CLASSES = (
    (ConfigError, "config-error"),
    (StageError, "stage-error"),
    (NumericError, "numeric-error"),
    (ContractViolation, "contract-error"),
    (FileNotFoundError, "io-error"),
    (OSError, "io-error"),
    (ValueError, "input-error"),
)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "orbits":
            return cmd_orbits(cfg)
        if args.command == "train":
            return cmd_train(cfg, trace_topology=args.trace_topology)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_ablate(cfg)
    except Exception as exc:  # noqa: BLE001 - single exit point maps error classes
        for klass, label in _ERROR_CLASSES:
            if isinstance(exc, klass):
                print(f"{label}: {exc}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
