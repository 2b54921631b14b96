"""Synthetic multi-domain bot/human network generator.

Each domain is a degree-corrected two-block graph whose within/between class
edge mix realizes a requested edge-homophily level in expectation. Bot edges
are made more heterophilous than human edges (bots mix indiscriminately,
humans stick together), which is what makes low-homophily regimes hard for
plain in-domain aggregation. Features are class-conditional spherical
Gaussians; domain shift translates both class centers by a per-domain offset
vector and optionally varies mean degree.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .graph import DomainSet, Graph

CLASS_AXIS = 0  # feature axis carrying the class separation


@dataclasses.dataclass(frozen=True)
class DomainSpec:
    """Parameters of one synthetic domain."""

    num_nodes: int
    feature_dim: int
    bot_ratio: float = 0.5
    homophily: float = 0.3
    mean_degree: float = 4.0
    class_center_shift: tuple = ()     # offset vector added to both class centers
    feature_noise_sigma: float = 1.0
    label_flip_rate: float = 0.0       # fraction of bots relabeled human
    class_separation: float = 2.0
    mixing_asymmetry: float = 0.8      # 0 = symmetric classes, 1 = maximal bot heterophily
    degree_sigma: float = 0.35         # lognormal spread of node degree propensities

    def validate(self) -> None:
        if self.num_nodes < 2:
            raise ValueError("num_nodes must be >= 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 0.0 < self.bot_ratio < 1.0:
            raise ValueError(f"bot_ratio must lie in (0, 1), got {self.bot_ratio}")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError(f"homophily must lie in [0, 1], got {self.homophily}")
        if self.mean_degree <= 0 or self.mean_degree >= self.num_nodes:
            raise ValueError(
                f"mean_degree must lie in (0, num_nodes), got {self.mean_degree}"
            )
        if not 0.0 <= self.label_flip_rate < 1.0:
            raise ValueError(
                f"label_flip_rate must lie in [0, 1), got {self.label_flip_rate}"
            )
        if self.feature_noise_sigma <= 0:
            raise ValueError("feature_noise_sigma must be positive")
        if self.class_center_shift and len(self.class_center_shift) != self.feature_dim:
            raise ValueError("class_center_shift length must equal feature_dim")
        if not 0.0 <= self.mixing_asymmetry <= 1.0:
            raise ValueError("mixing_asymmetry must lie in [0, 1]")


def _class_homophilies(spec: DomainSpec) -> tuple[float, float]:
    # Split the target homophily h into per-class edge preferences so the
    # expected same-class edge fraction stays h while bots mix more.
    h, r = spec.homophily, spec.bot_ratio
    a = spec.mixing_asymmetry * min(h, 1.0 - h)
    h_bot = float(np.clip(h - 2.0 * a * (1.0 - r), 0.0, 1.0))
    h_human = float(np.clip(h + 2.0 * a * r, 0.0, 1.0))
    return h_bot, h_human


def _weighted_pool(rng, pool: np.ndarray, theta: np.ndarray, size: int) -> np.ndarray:
    probs = theta[pool] / theta[pool].sum()
    return rng.choice(pool, size=size, p=probs)


def generate_domain(spec: DomainSpec, seed: int) -> Graph:
    """Draw one labeled domain graph; deterministic in (spec, seed).

    The returned graph carries noisy observed ``labels`` (bot labels flipped
    to human at ``label_flip_rate``) and clean generative ``true_labels``.
    """
    spec.validate()
    n = spec.num_nodes
    m_edges = int(round(n * spec.mean_degree / 2.0))
    if m_edges > n * (n - 1) // 2:
        raise ValueError("requested mean_degree exceeds the simple-graph capacity")
    rng = np.random.default_rng(seed)

    classes = (rng.random(n) < spec.bot_ratio).astype(np.int64)
    if classes.sum() == 0:
        classes[int(rng.integers(n))] = 1
    elif classes.sum() == n:
        classes[int(rng.integers(n))] = 0

    theta = rng.lognormal(0.0, spec.degree_sigma, size=n)
    bots = np.flatnonzero(classes == 1)
    humans = np.flatnonzero(classes == 0)
    h_bot, h_human = _class_homophilies(spec)
    h_by_class = np.array([h_human, h_bot])
    p_all = theta / theta.sum()

    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    rounds = 0
    while len(edges) < m_edges:
        rounds += 1
        if rounds > 200:
            raise RuntimeError("edge sampling failed to converge")
        want = m_edges - len(edges)
        batch = max(64, 2 * want)
        us = rng.choice(n, size=batch, p=p_all)
        same = rng.random(batch) < h_by_class[classes[us]]
        target_class = np.where(same, classes[us], 1 - classes[us])
        vb = _weighted_pool(rng, bots, theta, batch)
        vh = _weighted_pool(rng, humans, theta, batch)
        vs = np.where(target_class == 1, vb, vh)
        for u, v in zip(us.tolist(), vs.tolist()):
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            if key in seen:
                continue
            seen.add(key)
            edges.append(key)
            if len(edges) == m_edges:
                break

    shift = np.zeros(spec.feature_dim)
    if spec.class_center_shift:
        shift = np.asarray(spec.class_center_shift, dtype=np.float64)
    centers = np.zeros((2, spec.feature_dim))
    centers[0, CLASS_AXIS] = -spec.class_separation / 2.0
    centers[1, CLASS_AXIS] = +spec.class_separation / 2.0
    centers += shift
    features = centers[classes] + spec.feature_noise_sigma * rng.standard_normal((n, spec.feature_dim))

    labels = classes.copy()
    n_flips = int(np.floor(spec.label_flip_rate * len(bots)))
    if n_flips:
        flipped = rng.choice(bots, size=n_flips, replace=False)
        labels[flipped] = 0

    return Graph.from_edges(
        num_nodes=n,
        edges=np.asarray(edges, dtype=np.int64),
        features=features,
        labels=labels,
        true_labels=classes,
    )


@dataclasses.dataclass(frozen=True)
class SuiteSpec:
    """A multi-domain experiment: m source specs, one target spec, shift schedule.

    ``shift_schedule[k]`` is the center-offset magnitude of source k from the
    target. Sources are reordered by increasing shift so nearest/farthest
    subsets are prefix/suffix selectable.
    """

    sources: tuple
    target: DomainSpec
    shift_schedule: tuple
    rng_seed: int = 0

    def validate(self) -> None:
        if len(self.sources) < 1:
            raise ValueError("suite needs at least one source")
        if len(self.shift_schedule) != len(self.sources):
            raise ValueError("shift_schedule length must match source count")
        dims = {s.feature_dim for s in self.sources} | {self.target.feature_dim}
        if len(dims) != 1:
            raise ValueError("all domains in a suite must share feature_dim")
        self.target.validate()
        for s in self.sources:
            s.validate()
        if any(mag > 0 for mag in self.shift_schedule) and self.target.feature_dim < 2:
            raise ValueError("shifted suites need feature_dim >= 2")


def _shift_direction(rng, dim: int) -> np.ndarray:
    # Shift directions avoid the class axis so domain shift never masquerades
    # as class signal.
    vec = rng.standard_normal(dim)
    vec[CLASS_AXIS] = 0.0
    norm = np.linalg.norm(vec)
    if norm == 0:
        vec[(CLASS_AXIS + 1) % dim] = 1.0
        norm = 1.0
    return vec / norm


def generate_suite(spec: SuiteSpec) -> DomainSet:
    """Generate m sources plus one unlabeled target, ordered by shift magnitude."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    order = np.argsort(np.asarray(spec.shift_schedule), kind="stable")
    dim = spec.target.feature_dim

    directions = [_shift_direction(rng, dim) for _ in spec.sources]
    seeds = rng.integers(0, 2**31 - 1, size=len(spec.sources) + 1)

    sources = []
    for new_id, k in enumerate(order):
        mag = float(spec.shift_schedule[k])
        src_spec = dataclasses.replace(
            spec.sources[k],
            class_center_shift=tuple(mag * directions[k]),
        )
        g = generate_domain(src_spec, seed=int(seeds[k]))
        sources.append(g.with_domain(new_id))

    target_spec = dataclasses.replace(spec.target, class_center_shift=())
    tgt = generate_domain(target_spec, seed=int(seeds[-1]))
    tgt = dataclasses.replace(
        tgt, labels=None, domain_id=len(sources)
    )
    return DomainSet(sources=tuple(sources), target=tgt)
