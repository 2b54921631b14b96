"""Cross-source-domain topology: per node, the Top-K most similar nodes drawn
from the other source domains, weighted by structural signature similarity.
"""
from __future__ import annotations

import dataclasses
import logging

import numpy as np

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class CsdTopology:
    """Directed cross-domain edges over a batch of B stacked source nodes.

    Row indices are batch-local; ``node_ids`` / ``domains`` map them back to
    their graphs. Every edge crosses domains and carries a weight in [0, 1].
    """

    node_ids: np.ndarray     # (B,) global node id within its domain
    domains: np.ndarray      # (B,) domain id per row
    src: np.ndarray          # (E,) batch-local edge sources
    dst: np.ndarray          # (E,) batch-local edge destinations
    weights: np.ndarray      # (E,) in [0, 1]

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def dense_weights(self) -> np.ndarray:
        mat = np.zeros((self.num_nodes, self.num_nodes))
        mat[self.src, self.dst] = self.weights
        return mat

    def attention_mask(self) -> np.ndarray:
        """Boolean (B, B): cross-domain edges plus the mandatory self edge."""
        mask = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        mask[self.src, self.dst] = True
        np.fill_diagonal(mask, True)
        return mask

    def out_degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.src, 1)
        return deg


def _row_normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


def build_topology(embeddings: np.ndarray, domains: np.ndarray, node_ids: np.ndarray,
                   k: int, signatures: np.ndarray | None = None) -> CsdTopology:
    """Select Top-K cross-domain neighbors per node by embedding cosine.

    Ties break on (similarity desc, domain id asc, node id asc), so the result
    is a total function of its inputs. ``signatures`` are unit orbit-histogram
    rows aligned with the batch; when omitted every edge weight is 1.

    A batch containing a single domain yields a valid zero-edge topology.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    domains = np.asarray(domains, dtype=np.int64)
    node_ids = np.asarray(node_ids, dtype=np.int64)
    b = embeddings.shape[0]
    if domains.shape != (b,) or node_ids.shape != (b,):
        raise ValueError("domains/node_ids must align with embedding rows")

    if len(np.unique(domains)) < 2:
        logger.info("cross-domain topology degenerate: single-domain batch")
        empty = np.zeros(0, dtype=np.int64)
        return CsdTopology(node_ids, domains, empty, empty.copy(),
                           np.zeros(0, dtype=np.float64))

    normed = _row_normalize(embeddings)
    sims = normed @ normed.T
    same_domain = domains[:, None] == domains[None, :]
    # same-domain entries (including self) sort to the back and never qualify
    keyed = np.where(same_domain, -np.inf, sims)
    order = np.lexsort((
        np.broadcast_to(node_ids, (b, b)),
        np.broadcast_to(domains, (b, b)),
        -keyed,
    ))
    n_cross = b - np.bincount(domains, minlength=domains.max() + 1)[domains]
    take = np.minimum(k, n_cross)
    src = np.repeat(np.arange(b, dtype=np.int64), take)
    dst = np.concatenate([order[i, :take[i]] for i in range(b)]).astype(np.int64) \
        if b else np.zeros(0, dtype=np.int64)
    if signatures is None:
        weights = np.ones(len(src))
    else:
        signatures = np.asarray(signatures, dtype=np.float64)
        if signatures.shape[0] != b:
            raise ValueError("signatures must align with embedding rows")
        sig_unit = _row_normalize(signatures)
        weights = np.clip(np.einsum("ij,ij->i", sig_unit[src], sig_unit[dst]),
                          0.0, 1.0)
        # rows that were all-zero stand for edge-free ego-nets and score 0
        zero = (np.linalg.norm(signatures[src], axis=1) == 0) | \
               (np.linalg.norm(signatures[dst], axis=1) == 0)
        weights[zero] = 0.0
    return CsdTopology(node_ids, domains, src, dst, weights)


def label_homophily(topology: CsdTopology, classes: np.ndarray) -> float:
    """Fraction of topology edges whose endpoints share a class."""
    if topology.num_edges == 0:
        raise ValueError("topology has no edges")
    classes = np.asarray(classes)
    return float(np.mean(classes[topology.src] == classes[topology.dst]))


def trace_lines(topology: CsdTopology) -> list[str]:
    """Debug dump, one `p:i q:j e_ij` line per edge."""
    lines = []
    for s, d, w in zip(topology.src, topology.dst, topology.weights):
        lines.append(
            f"{topology.domains[s]}:{topology.node_ids[s]} "
            f"{topology.domains[d]}:{topology.node_ids[d]} {w:.6f}"
        )
    return lines
