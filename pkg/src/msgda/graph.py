"""Immutable undirected graphs, neighborhood queries and mini-batch sampling.

Graphs are stored in CSR form (``indptr``/``indices``) with per-node feature
vectors and optional binary labels (0 = human, 1 = bot). Adjacency is always
symmetric, free of self loops and duplicates; self loops needed by encoders
are added logically by the consumer, never stored.
"""
from __future__ import annotations

import dataclasses

import numpy as np


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(array)
    out.flags.writeable = False
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with node features and optional node labels.

    ``true_labels`` carries the generative class of synthetic nodes. It exists
    for evaluation only; training code must never read it.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    domain_id: int = 0
    true_labels: np.ndarray | None = None

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges,
        features,
        labels=None,
        domain_id: int = 0,
        true_labels=None,
    ) -> "Graph":
        """Build a graph from an iterable of undirected (u, v) pairs.

        Rejects self loops, duplicate edges and out-of-range endpoints.
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise ValueError(
                f"features must be ({num_nodes}, d), got {features.shape}"
            )
        edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                           dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= num_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self loops are not allowed")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            keyed = lo * num_nodes + hi
            if len(np.unique(keyed)) != len(keyed):
                raise ValueError("duplicate edges are not allowed")
            src = np.concatenate([lo, hi])
            dst = np.concatenate([hi, lo])
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
        else:
            src = np.zeros(0, dtype=np.int64)
            dst = np.zeros(0, dtype=np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        labels = _check_labels(labels, num_nodes, "labels")
        true_labels = _check_labels(true_labels, num_nodes, "true_labels")
        return cls(
            num_nodes=num_nodes,
            indptr=_frozen(indptr),
            indices=_frozen(dst),
            features=_frozen(features),
            labels=labels,
            domain_id=domain_id,
            true_labels=true_labels,
        )

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, node: int) -> np.ndarray:
        if not 0 <= node < self.num_nodes:
            raise ValueError(f"node {node} out of range [0, {self.num_nodes})")
        return self.indices[self.indptr[node]: self.indptr[node + 1]]

    def degree(self, node: int) -> int:
        """Neighbor count of ``node``, excluding any logical self loop."""
        return len(self.neighbors(node))

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors(u)
        pos = np.searchsorted(nbrs, v)
        return pos < len(nbrs) and nbrs[pos] == v

    def edge_array(self) -> np.ndarray:
        """All undirected edges as an (m, 2) array with u < v."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask]])

    def dense_adjacency(self) -> np.ndarray:
        adj = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        adj[src, self.indices] = 1.0
        return adj

    def with_domain(self, domain_id: int) -> "Graph":
        return dataclasses.replace(self, domain_id=domain_id)


def _check_labels(labels, num_nodes: int, name: str):
    if labels is None:
        return None
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (num_nodes,):
        raise ValueError(f"{name} must have shape ({num_nodes},)")
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ValueError(f"{name} must be 0 or 1")
    return _frozen(labels)


def bfs_nodes(graph: Graph, centers, hops: int) -> np.ndarray:
    """Sorted ids of all nodes within ``hops`` of any center (centers included)."""
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    seen = np.zeros(graph.num_nodes, dtype=bool)
    seen[centers] = True
    frontier = centers
    for _ in range(hops):
        if len(frontier) == 0:
            break
        nxt = []
        for v in frontier:
            nxt.append(graph.neighbors(v))
        nxt = np.unique(np.concatenate(nxt)) if nxt else np.zeros(0, np.int64)
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def induced_subgraph(graph: Graph, nodes: np.ndarray) -> Graph:
    """Induced subgraph on ``nodes`` (sorted global ids), features carried over."""
    nodes = np.asarray(nodes, dtype=np.int64)
    local = np.full(graph.num_nodes, -1, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    src = np.repeat(np.arange(graph.num_nodes), graph.degrees())
    dst = graph.indices
    keep = (local[src] >= 0) & (local[dst] >= 0) & (src < dst)
    edges = np.column_stack([local[src[keep]], local[dst[keep]]])
    return Graph.from_edges(
        num_nodes=len(nodes),
        edges=edges,
        features=graph.features[nodes],
        labels=None if graph.labels is None else graph.labels[nodes],
        domain_id=graph.domain_id,
        true_labels=None if graph.true_labels is None else graph.true_labels[nodes],
    )


def ego_network(graph: Graph, center: int, hops: int) -> Graph:
    """Induced subgraph on all nodes at distance <= hops from ``center``."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if not 0 <= center < graph.num_nodes:
        raise ValueError(f"center {center} out of range")
    return induced_subgraph(graph, bfs_nodes(graph, [center], hops))


@dataclasses.dataclass(frozen=True, eq=False)
class Subbatch:
    """Mini-batch centers plus their induced 2-hop computation subgraph."""

    domain_id: int
    centers: np.ndarray        # global ids, sorted
    nodes: np.ndarray          # global ids of the closure, sorted
    subgraph: Graph
    center_local: np.ndarray   # positions of centers inside the closure


SUBBATCH_HOPS = 2  # receptive field of the fixed 2-layer encoder


def sample_subbatch(graph: Graph, batch_size: int, rng_seed: int) -> Subbatch:
    """Uniform centers without replacement plus their 2-hop induced closure.

    ``batch_size`` is clamped to the node count; the draw is deterministic in
    the seed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(rng_seed)
    size = min(batch_size, graph.num_nodes)
    centers = np.sort(rng.choice(graph.num_nodes, size=size, replace=False))
    nodes = bfs_nodes(graph, centers, SUBBATCH_HOPS)
    sub = induced_subgraph(graph, nodes)
    center_local = np.searchsorted(nodes, centers)
    return Subbatch(
        domain_id=graph.domain_id,
        centers=centers,
        nodes=nodes,
        subgraph=sub,
        center_local=center_local,
    )


def full_subbatch(graph: Graph) -> Subbatch:
    """The whole graph viewed as one batch (every node a center)."""
    nodes = np.arange(graph.num_nodes)
    return Subbatch(
        domain_id=graph.domain_id,
        centers=nodes,
        nodes=nodes,
        subgraph=graph,
        center_local=nodes,
    )


def edge_homophily(graph: Graph, classes: np.ndarray) -> float:
    """Fraction of edges whose endpoints share a class."""
    edges = graph.edge_array()
    if len(edges) == 0:
        raise ValueError("graph has no edges")
    classes = np.asarray(classes)
    return float(np.mean(classes[edges[:, 0]] == classes[edges[:, 1]]))


@dataclasses.dataclass(frozen=True, eq=False)
class DomainSet:
    """Labeled source graphs plus one unlabeled target graph.

    Target labels are not reachable from ``target``; evaluation code obtains
    them through :meth:`target_eval_labels` only.
    """

    sources: tuple
    target: Graph

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ValueError("at least one source domain is required")
        dims = {g.feature_dim for g in self.sources} | {self.target.feature_dim}
        if len(dims) != 1:
            raise ValueError("all graphs in a domain set must share feature_dim")
        for g in self.sources:
            if g.labels is None:
                raise ValueError("source graphs must be fully labeled")
        if self.target.labels is not None:
            raise ValueError("target graph must not expose labels")

    @property
    def m(self) -> int:
        return len(self.sources)

    @property
    def feature_dim(self) -> int:
        return self.target.feature_dim

    def target_eval_labels(self) -> np.ndarray:
        if self.target.true_labels is None:
            raise ValueError("target has no evaluation labels attached")
        return self.target.true_labels


# ---------------------------------------------------------------------------
# Text file format:
#   nodes <n> dim <d>
#   feat <v> <f1> ... <fd>     (n lines)
#   label <v> <0|1>            (optional, n lines)
#   edge <u> <v>               (u < v, one line per undirected edge)
# ---------------------------------------------------------------------------

def save_graph(graph: Graph, path) -> None:
    lines = [f"nodes {graph.num_nodes} dim {graph.feature_dim}"]
    for v in range(graph.num_nodes):
        feats = " ".join(repr(float(x)) for x in graph.features[v])
        lines.append(f"feat {v} {feats}")
    labels = graph.labels if graph.labels is not None else graph.true_labels
    if labels is not None:
        for v in range(graph.num_nodes):
            lines.append(f"label {v} {labels[v]}")
    for u, v in graph.edge_array():
        lines.append(f"edge {u} {v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path, domain_id: int = 0) -> Graph:
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    if not raw or not raw[0].startswith("nodes "):
        raise ValueError(f"{path}: missing 'nodes <n> dim <d>' header")
    head = raw[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "dim":
        raise ValueError(f"{path}: malformed header {raw[0]!r}")
    n, d = int(head[1]), int(head[3])
    features = np.zeros((n, d))
    labels = None
    seen_feat = np.zeros(n, dtype=bool)
    edges = []
    for ln in raw[1:]:
        parts = ln.split()
        if parts[0] == "feat":
            v = int(parts[1])
            vals = [float(x) for x in parts[2:]]
            if len(vals) != d:
                raise ValueError(f"{path}: feat line for node {v} has {len(vals)} values, expected {d}")
            features[v] = vals
            seen_feat[v] = True
        elif parts[0] == "label":
            if labels is None:
                labels = np.full(n, -1, dtype=np.int64)
            labels[int(parts[1])] = int(parts[2])
        elif parts[0] == "edge":
            u, v = int(parts[1]), int(parts[2])
            if u >= v:
                raise ValueError(f"{path}: edge {u} {v} violates u < v")
            edges.append((u, v))
        else:
            raise ValueError(f"{path}: unknown line kind {parts[0]!r}")
    if not seen_feat.all():
        raise ValueError(f"{path}: missing feat lines for some nodes")
    if labels is not None and (labels < 0).any():
        raise ValueError(f"{path}: label lines do not cover all nodes")
    return Graph.from_edges(n, np.asarray(edges, np.int64).reshape(-1, 2),
                            features, labels=labels, domain_id=domain_id)
