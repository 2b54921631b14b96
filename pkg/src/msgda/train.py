"""Selective multi-source adversarial training.

Per step the critic takes several ascent steps on the weighted mean-gap loss
(with a Lipschitz gradient penalty), then the encoder/classifier take one
descent step on weighted cross-entropy + pairwise source MMD + the critic
term. Domain weights blend a semantic score from critic means with a fixed
structural score from graphlet histograms and refresh once per epoch.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from .autodiff import Tape, Tensor
from .errors import ContractViolation, StageError
from .graph import DomainSet, Subbatch, sample_subbatch
from .graphlets import domain_similarity, ego_signatures
from .model import (ModelDims, ModelParams, classify, criticize, fuse,
                    gat_cross_forward, gcn_forward, normalized_adjacency)
from .topology import CsdTopology, build_topology, trace_lines

logger = logging.getLogger(__name__)

VARIANTS = ("base", "+csd-noedge", "+csd", "+csd+smst", "+csd+smst+ar")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters; defaults follow the reference configuration."""

    k_neighbors: int = 5
    gamma: float = 0.5              # semantic vs structural weight blend
    lambda_refine: float = 0.5      # inference-time refinement mix
    eta1: float = 1.0               # pairwise source alignment coefficient
    eta2: float = 1.0               # adversarial coefficient
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 30
    critic_steps: int = 5
    rng_seed: int = 0
    hidden: int = 64
    mmd_bandwidths: tuple = (0.5, 1.0, 2.0)
    mmd_bandwidth_mode: str = "median"   # multipliers of the joint median, or "absolute"
    gp_coefficient: float = 10.0
    critic_clip: float | None = None     # weight clipping alternative to the penalty
    topology_from_features: bool = False
    weight_refresh_nodes: int = 128      # per-domain sample size for critic means
    variant: str = "+csd+smst+ar"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.lambda_refine <= 1.0:
            raise ValueError("lambda_refine must lie in [0, 1]")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("eta coefficients must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mmd_bandwidth_mode not in ("median", "absolute"):
            raise ValueError("mmd_bandwidth_mode must be 'median' or 'absolute'")

    @property
    def uses_csd(self) -> bool:
        return self.variant != "base"

    @property
    def uses_edge_weights(self) -> bool:
        return self.variant in ("+csd", "+csd+smst", "+csd+smst+ar")

    @property
    def uses_smst(self) -> bool:
        return self.variant in ("+csd+smst", "+csd+smst+ar")

    @property
    def uses_refinement(self) -> bool:
        return self.variant == "+csd+smst+ar"

    @property
    def effective_lambda(self) -> float:
        return self.lambda_refine if self.uses_refinement else 1.0


@dataclasses.dataclass
class DomainWeights:
    """Per-source transfer weights: semantic, structural, and their blend."""

    semantic: np.ndarray
    structural: np.ndarray
    combined: np.ndarray

    @classmethod
    def uniform(cls, m: int) -> "DomainWeights":
        ones = np.ones(m)
        return cls(ones.copy(), ones.copy(), ones.copy())


def semantic_weight(source_mean: float, target_mean: float) -> float:
    """exp(-|gap|) of the critic means; 1 when the domains are indistinguishable."""
    return float(np.exp(-abs(source_mean - target_mean)))


def combine_weights(semantic: float, structural: float, gamma: float) -> float:
    return float(gamma * semantic + (1.0 - gamma) * structural)


@dataclasses.dataclass
class StructData:
    """Precomputed structural artifacts; which fields exist depends on variant."""

    signatures: tuple | None = None          # per-source (n_k, 15) unit rows
    structural_weights: np.ndarray | None = None  # (m,) graphlet-kernel scores


def prepare_structures(domain_set: DomainSet, config: TrainConfig) -> StructData:
    """Compute exactly the structural inputs the configured variant needs."""
    signatures = None
    if config.uses_csd and config.uses_edge_weights:
        signatures = tuple(ego_signatures(g) for g in domain_set.sources)
    weights = None
    if config.uses_smst:
        weights = np.array([
            domain_similarity(g, domain_set.target) for g in domain_set.sources
        ])
    return StructData(signatures=signatures, structural_weights=weights)


@dataclasses.dataclass
class TrainHistory:
    sup_loss: list
    critic_gap: list
    pair_reg: list
    weights: list
    wall_seconds: list

    @property
    def epochs(self) -> int:
        return len(self.sup_loss)

    def write_csv(self, path) -> None:
        m = len(self.weights[0]) if self.weights else 0
        header = "epoch,l_sup,l_d,reg_p," + ",".join(f"w_{k + 1}" for k in range(m))
        lines = [header]
        for e in range(self.epochs):
            ws = ",".join(repr(float(w)) for w in self.weights[e])
            lines.append(f"{e},{self.sup_loss[e]!r},{self.critic_gap[e]!r},"
                         f"{self.pair_reg[e]!r},{ws}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(self, tensors, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.tensors]
        self.v = [np.zeros_like(p.value) for p in self.tensors]

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1 ** self.t
        bias2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.value -= self.lr * (update + self.weight_decay * p.value)


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def supervised_loss(tape: Tape, logits_by_domain, labels_by_domain, weights) -> Tensor:
    """Weighted cross-entropy summed over source domains.

    Each domain contributes w_k times its mean negative log-likelihood; a
    domain with an empty batch contributes nothing.
    """
    total = tape.constant([[0.0]])
    for logits, labels, w in zip(logits_by_domain, labels_by_domain, weights):
        labels = np.asarray(labels, dtype=np.int64)
        n = len(labels)
        if n == 0:
            logger.info("supervised_loss: empty batch for a domain, skipped")
            continue
        if logits.shape[0] != n:
            raise ValueError("one logit row per labeled node is required")
        onehot = np.zeros((n, 2))
        onehot[np.arange(n), labels] = 1.0
        log_probs = tape.log(tape.row_softmax(logits))
        picked = tape.reduce_sum(tape.hadamard(log_probs, tape.constant(onehot)))
        total = tape.add(total, tape.scalar_mul(picked, -float(w) / n))
    return total


def critic_loss(tape: Tape, critic_outputs, target_output, weights) -> Tensor:
    """Weighted sum over sources of (mean critic on source - mean on target)."""
    if target_output is None or target_output.shape[0] == 0:
        raise ContractViolation("critic_loss requires at least one target sample")
    total = tape.constant([[0.0]])
    mean_t = tape.reduce_mean(target_output)
    for out, w in zip(critic_outputs, weights):
        gap = tape.sub(tape.reduce_mean(out), mean_t)
        total = tape.add(total, tape.scalar_mul(gap, float(w)))
    return total


def _pairwise_sq_dists(tape: Tape, x: Tensor, y: Tensor) -> Tensor:
    h = x.shape[1]
    ones_h = tape.constant(np.ones((h, 1)))
    sx = tape.matmul(tape.hadamard(x, x), ones_h)
    sy = tape.matmul(tape.hadamard(y, y), ones_h)
    broad = tape.add(tape.matmul(sx, tape.constant(np.ones((1, y.shape[0])))),
                     tape.matmul(tape.constant(np.ones((x.shape[0], 1))),
                                 tape.transpose(sy)))
    return tape.sub(broad, tape.scalar_mul(tape.matmul(x, tape.transpose(y)), 2.0))


def _kernel_mean(tape: Tape, x: Tensor, y: Tensor, bandwidths) -> Tensor:
    d2 = _pairwise_sq_dists(tape, x, y)
    acc = None
    for bw in bandwidths:
        term = tape.exp(tape.scalar_mul(d2, -0.5 / (bw * bw)))
        acc = term if acc is None else tape.add(acc, term)
    return tape.reduce_mean(acc)


def mmd_squared(tape: Tape, x: Tensor, y: Tensor, bandwidths) -> Tensor:
    """Biased squared MMD with a sum-of-Gaussians kernel (zero when x is y)."""
    kxx = _kernel_mean(tape, x, x, bandwidths)
    kyy = _kernel_mean(tape, y, y, bandwidths)
    kxy = _kernel_mean(tape, x, y, bandwidths)
    return tape.sub(tape.add(kxx, kyy), tape.scalar_mul(kxy, 2.0))


def resolve_bandwidths(config: TrainConfig, joint_values: np.ndarray):
    """Absolute kernel bandwidths; median mode scales by the joint batch's
    median pairwise distance (treated as a constant, not differentiated)."""
    if config.mmd_bandwidth_mode == "absolute":
        return tuple(config.mmd_bandwidths)
    if joint_values.shape[0] < 2:
        med = 1.0
    else:
        med = float(np.median(pdist(joint_values)))
    if med <= 0:
        med = 1.0
    return tuple(mult * med for mult in config.mmd_bandwidths)


def mmd_pairwise(tape: Tape, blocks, config: TrainConfig) -> Tensor:
    """Sum of squared MMD over ordered pairs of source embedding blocks."""
    if len(blocks) < 2:
        return tape.constant([[0.0]])
    total = tape.constant([[0.0]])
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            joint = np.vstack([blocks[i].value, blocks[j].value])
            bws = resolve_bandwidths(config, joint)
            pair = mmd_squared(tape, blocks[i], blocks[j], bws)
            # ordered pairs count each unordered pair twice
            total = tape.add(total, tape.scalar_mul(pair, 2.0))
    return total


def gradient_penalty(tape: Tape, params: ModelParams) -> Tensor:
    # The critic is affine, so its input gradient at every interpolate equals
    # its weight column and the unit-norm penalty reduces to (||w|| - 1)^2.
    w = params["critic_w"]
    sq = tape.add(tape.reduce_sum(tape.hadamard(w, w)), tape.constant([[1e-12]]))
    norm = tape.exp(tape.scalar_mul(tape.log(sq), 0.5))
    diff = tape.sub(norm, tape.constant([[1.0]]))
    return tape.hadamard(diff, diff)


# ---------------------------------------------------------------------------
# Batched multi-domain forward pass
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class SourceStack:
    """Disjoint union of per-source subbatches for one encoder pass."""

    adj_norm: sp.csr_matrix
    features: np.ndarray
    center_index: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    node_ids: np.ndarray
    segments: list            # (start, end) per source among center rows
    sig_rows: np.ndarray | None


def stack_source_batches(batches, signatures=None) -> SourceStack:
    mats, feats, centers, labels, domains, node_ids, sig_rows = [], [], [], [], [], [], []
    segments = []
    offset = 0
    row = 0
    for idx, b in enumerate(batches):
        mats.append(normalized_adjacency(b.subgraph))
        feats.append(b.subgraph.features)
        centers.append(b.center_local + offset)
        labels.append(b.subgraph.labels[b.center_local])
        domains.append(np.full(len(b.centers), b.domain_id, dtype=np.int64))
        node_ids.append(b.centers)
        if signatures is not None:
            sig_rows.append(signatures[idx][b.centers])
        segments.append((row, row + len(b.centers)))
        row += len(b.centers)
        offset += b.subgraph.num_nodes
    return SourceStack(
        adj_norm=sp.block_diag(mats, format="csr"),
        features=np.vstack(feats),
        center_index=np.concatenate(centers),
        labels=np.concatenate(labels),
        domains=np.concatenate(domains),
        node_ids=np.concatenate(node_ids),
        segments=segments,
        sig_rows=np.vstack(sig_rows) if signatures is not None else None,
    )


@dataclasses.dataclass
class ForwardResult:
    z_sources: Tensor            # (B, h) fused source embeddings, segment order
    z_cross: Tensor | None       # (B, h) cross-domain channel, None without CSD
    z_target: Tensor             # (bt, h) target embeddings
    topology: CsdTopology | None
    segments: list


def forward_pass(tape: Tape, params: ModelParams, stack: SourceStack,
                 target_batch: Subbatch, config: TrainConfig,
                 target_adj: sp.csr_matrix | None = None) -> ForwardResult:
    """Full multi-domain forward; the target never enters the cross channel."""
    zi_all = gcn_forward(tape, stack.adj_norm, tape.constant(stack.features), params)
    zi = tape.gather_rows(zi_all, stack.center_index)

    topo = None
    z_cross = None
    if config.uses_csd:
        if config.topology_from_features:
            basis = stack.features[stack.center_index]
        else:
            basis = zi.value
        topo = build_topology(basis, stack.domains, stack.node_ids,
                              config.k_neighbors, signatures=stack.sig_rows)
        z_cross = gat_cross_forward(tape, zi, topo.dense_weights(),
                                    topo.attention_mask(), params)
        z = fuse(tape, zi, z_cross, params)
    else:
        z = zi

    adj_t = target_adj if target_adj is not None else normalized_adjacency(target_batch.subgraph)
    zt_all = gcn_forward(tape, adj_t, tape.constant(target_batch.subgraph.features), params)
    zt = tape.gather_rows(zt_all, target_batch.center_local)
    return ForwardResult(z, z_cross, zt, topo, stack.segments)


def _segment_rows(tape: Tape, tensor: Tensor, segments):
    return [tape.gather_rows(tensor, np.arange(s, e)) for s, e in segments]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _require_structures(config: TrainConfig, structs: StructData | None, m: int) -> StructData:
    structs = structs or StructData()
    if config.uses_edge_weights and structs.signatures is None:
        raise StageError("missing precomputed signatures for edge-weighted topology")
    if config.uses_smst and structs.structural_weights is None:
        raise StageError("missing precomputed structural domain weights")
    if structs.structural_weights is not None and len(structs.structural_weights) != m:
        raise StageError("structural weight count does not match source count")
    return structs


def _initial_weights(config: TrainConfig, structs: StructData, m: int) -> DomainWeights:
    if not config.uses_smst:
        return DomainWeights.uniform(m)
    semantic = np.ones(m)
    structural = structs.structural_weights.copy()
    combined = np.array([
        combine_weights(s, g, config.gamma) for s, g in zip(semantic, structural)
    ])
    return DomainWeights(semantic, structural, combined)


def _zero_all(params: ModelParams) -> None:
    for p in params.all_params():
        p.zero_grad()


def refresh_domain_weights(domain_set: DomainSet, params: ModelParams,
                           config: TrainConfig, structs: StructData,
                           rng_seed: int = 0) -> DomainWeights:
    """Recompute semantic weights from fresh critic means.

    Means are taken over per-domain samples of ``weight_refresh_nodes``
    centers (the whole graph when it is smaller), keeping the refresh cost
    bounded while the estimate stays low-variance.
    """
    rng = np.random.default_rng(rng_seed)
    batches = [
        sample_subbatch(g, config.weight_refresh_nodes, int(rng.integers(2**31 - 1)))
        for g in domain_set.sources
    ]
    tgt_batch = sample_subbatch(domain_set.target, config.weight_refresh_nodes,
                                int(rng.integers(2**31 - 1)))
    stack = stack_source_batches(
        batches,
        signatures=structs.signatures if config.uses_edge_weights else None,
    )
    tape = Tape()
    result = forward_pass(tape, params, stack, tgt_batch, config)
    d_src = criticize(tape, result.z_sources, params).value
    mean_t = float(criticize(tape, result.z_target, params).value.mean())
    semantic = np.array([
        semantic_weight(float(d_src[s:e].mean()), mean_t) for s, e in stack.segments
    ])
    structural = structs.structural_weights.copy()
    combined = np.array([
        combine_weights(sw, gw, config.gamma) for sw, gw in zip(semantic, structural)
    ])
    return DomainWeights(semantic, structural, combined)


def train(domain_set: DomainSet, config: TrainConfig,
          structs: StructData | None = None,
          trace: list | None = None) -> tuple[ModelParams, TrainHistory]:
    """Run the full alternating optimization; deterministic in config.rng_seed."""
    config.validate()
    m = domain_set.m
    structs = _require_structures(config, structs, m)

    rng = np.random.default_rng(config.rng_seed)
    dims = ModelDims(domain_set.feature_dim, hidden=config.hidden)
    params = ModelParams.init(dims, seed=int(rng.integers(2**31 - 1)))
    opt_gen = AdamW(params.generator_params(), config.learning_rate, config.weight_decay)
    opt_critic = AdamW(params.critic_params(), config.learning_rate, config.weight_decay)

    weights = _initial_weights(config, structs, m)
    history = TrainHistory([], [], [], [], [])
    steps_per_epoch = max(1, math.ceil(
        max(g.num_nodes for g in domain_set.sources) / config.batch_size))

    for epoch in range(config.epochs):
        started = time.perf_counter()
        sup_vals, gap_vals, reg_vals = [], [], []
        for _ in range(steps_per_epoch):
            src_batches = [
                sample_subbatch(g, config.batch_size, int(rng.integers(2**31 - 1)))
                for g in domain_set.sources
            ]
            tgt_batch = sample_subbatch(domain_set.target, config.batch_size,
                                        int(rng.integers(2**31 - 1)))
            stack = stack_source_batches(
                src_batches,
                signatures=structs.signatures if config.uses_edge_weights else None,
            )

            tape = Tape()
            result = forward_pass(tape, params, stack, tgt_batch, config)
            if trace is not None and result.topology is not None:
                trace.extend(trace_lines(result.topology))

            _critic_phase(result.z_sources.value, result.z_target.value,
                          stack.segments, params, opt_critic, weights, config)

            logits = classify(tape, result.z_sources, params)
            logits_by_domain = _segment_rows(tape, logits, stack.segments)
            labels_by_domain = [stack.labels[s:e] for s, e in stack.segments]
            l_sup = supervised_loss(tape, logits_by_domain, labels_by_domain,
                                    weights.combined)

            objective = l_sup
            if config.uses_csd and m >= 2:
                reg = mmd_pairwise(tape, _segment_rows(tape, result.z_cross, stack.segments),
                                   config)
                objective = tape.add(objective, tape.scalar_mul(reg, config.eta1))
            else:
                reg = None

            d_src = _segment_rows(tape, criticize(tape, result.z_sources, params),
                                  stack.segments)
            d_tgt = criticize(tape, result.z_target, params)
            l_d = critic_loss(tape, d_src, d_tgt, weights.combined)
            objective = tape.add(objective, tape.scalar_mul(l_d, config.eta2))

            tape.backward(objective)
            opt_gen.step()
            _zero_all(params)

            sup_vals.append(float(l_sup.value[0, 0]))
            gap_vals.append(float(l_d.value[0, 0]))
            reg_vals.append(float(reg.value[0, 0]) if reg is not None else 0.0)

        if config.uses_smst:
            weights = refresh_domain_weights(domain_set, params, config, structs,
                                             rng_seed=int(rng.integers(2**31 - 1)))
        history.sup_loss.append(float(np.mean(sup_vals)))
        history.critic_gap.append(float(np.mean(gap_vals)))
        history.pair_reg.append(float(np.mean(reg_vals)))
        history.weights.append(weights.combined.copy())
        history.wall_seconds.append(time.perf_counter() - started)

    return params, history


def _critic_phase(z_src_values, z_tgt_values, segments, params, opt_critic,
                  weights, config: TrainConfig) -> None:
    """Ascent steps on the critic only; embeddings enter as constants."""
    for _ in range(config.critic_steps):
        tape = Tape()
        outs = [criticize(tape, tape.constant(z_src_values[s:e]), params)
                for s, e in segments]
        out_t = criticize(tape, tape.constant(z_tgt_values), params)
        l_d = critic_loss(tape, outs, out_t, weights.combined)
        objective = tape.scalar_mul(l_d, -config.eta2)
        if config.critic_clip is None:
            objective = tape.add(objective,
                                 tape.scalar_mul(gradient_penalty(tape, params),
                                                 config.gp_coefficient))
        tape.backward(objective)
        opt_critic.step()
        _zero_all(params)
        if config.critic_clip is not None:
            for p in params.critic_params():
                np.clip(p.value, -config.critic_clip, config.critic_clip, out=p.value)
