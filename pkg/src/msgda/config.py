"""Experiment configuration: a strict JSON file with explicit sections.

Unknown keys anywhere in the file are rejected so typos in sweeps fail fast.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json

from .errors import ConfigError
from .synth import DomainSpec, SuiteSpec
from .train import VARIANTS, TrainConfig

_DOMAIN_KEYS = {
    "num_nodes": int,
    "bot_ratio": float,
    "homophily": float,
    "mean_degree": float,
    "feature_noise_sigma": float,
    "label_flip_rate": float,
    "class_separation": float,
    "mixing_asymmetry": float,
    "degree_sigma": float,
}

_TRAIN_KEYS = {
    "k_neighbors": int,
    "gamma": float,
    "lambda_refine": float,
    "eta1": float,
    "eta2": float,
    "batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "epochs": int,
    "critic_steps": int,
    "rng_seed": int,
    "hidden": int,
    "mmd_bandwidths": tuple,
    "mmd_bandwidth_mode": str,
    "gp_coefficient": float,
    "critic_clip": float,
    "topology_from_features": bool,
    "weight_refresh_nodes": int,
}


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    seeds: tuple
    variant: str
    suite: SuiteSpec
    train: TrainConfig

    def config_hash(self) -> str:
        blob = json.dumps(_as_jsonable(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _as_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _as_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_as_jsonable(x) for x in obj]
    return obj


def _convert(section: str, key: str, value, kind):
    try:
        if kind is tuple:
            return tuple(float(v) for v in value)
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError("expected a boolean")
            return value
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def _parse_section(section: str, raw: dict, allowed: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object")
    out = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key: {section}.{key}")
        out[key] = _convert(section, key, value, allowed[key])
    return out


def _parse_domain(section: str, raw: dict, feature_dim: int) -> DomainSpec:
    fields = _parse_section(section, raw, _DOMAIN_KEYS)
    spec = DomainSpec(feature_dim=feature_dim, **fields)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None
    return spec


def _parse_suite(raw: dict) -> SuiteSpec:
    if not isinstance(raw, dict):
        raise ConfigError("suite: expected an object")
    known = {"feature_dim", "rng_seed", "shift_schedule", "target",
             "sources", "source_template"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key: suite.{sorted(unknown)[0]}")
    try:
        feature_dim = int(raw["feature_dim"])
        schedule = tuple(float(x) for x in raw["shift_schedule"])
    except KeyError as exc:
        raise ConfigError(f"suite: missing required key {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"suite: {exc}") from None
    if "target" not in raw:
        raise ConfigError("suite: missing required key target")
    target = _parse_domain("suite.target", raw["target"], feature_dim)

    if "sources" in raw and "source_template" in raw:
        raise ConfigError("suite: give either sources or source_template, not both")
    if "sources" in raw:
        entries = raw["sources"]
        if not isinstance(entries, list) or len(entries) != len(schedule):
            raise ConfigError("suite.sources must list one spec per schedule entry")
        sources = tuple(
            _parse_domain(f"suite.sources[{i}]", entry, feature_dim)
            for i, entry in enumerate(entries)
        )
    elif "source_template" in raw:
        template = _parse_domain("suite.source_template", raw["source_template"],
                                 feature_dim)
        sources = tuple(template for _ in schedule)
    else:
        raise ConfigError("suite: missing sources or source_template")

    spec = SuiteSpec(sources=sources, target=target, shift_schedule=schedule,
                     rng_seed=int(raw.get("rng_seed", 0)))
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"suite: {exc}") from None
    return spec


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    known = {"out_dir", "seeds", "variant", "suite", "train"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    for req in ("out_dir", "seeds", "suite"):
        if req not in raw:
            raise ConfigError(f"missing required key: {req}")
    seeds = tuple(int(s) for s in raw["seeds"])
    if not seeds:
        raise ConfigError("seeds: need at least one seed")
    variant = raw.get("variant", "+csd+smst+ar")
    if variant not in VARIANTS:
        raise ConfigError(f"variant: unknown variant {variant!r}")
    suite = _parse_suite(raw["suite"])
    train_fields = _parse_section("train", raw.get("train", {}), _TRAIN_KEYS)
    train = TrainConfig(variant=variant, **train_fields)
    try:
        train.validate()
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    return ExperimentConfig(out_dir=str(raw["out_dir"]), seeds=seeds,
                            variant=variant, suite=suite, train=train)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
