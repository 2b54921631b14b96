"""Exact per-node orbit counts for connected graphlets on up to 4 nodes.

Orbit numbering (15 orbits total):
    0  edge endpoint                     8  4-cycle vertex
    1  3-path end                        9  paw pendant
    2  3-path middle                    10  paw triangle vertex (degree 2)
    3  triangle vertex                  11  paw cut vertex (degree 3)
    4  4-path end                       12  diamond vertex (degree 2)
    5  4-path middle                    13  diamond vertex (degree 3)
    6  claw leaf                        14  K4 vertex
    7  claw center

Counts are induced-subgraph exact. The counter works from closed-form
identities over the adjacency matrix plus one explicit loop for K4s, all in
double precision (counts at desk scale stay far below 2^53, so rounding back
to integers is exact).
"""
from __future__ import annotations

import hashlib

import numpy as np

from .graph import Graph, bfs_nodes

N_ORBITS = 15
EGO_RADIUS = 3  # ego-network hop radius used for edge-score signatures


def count_orbits(graph: Graph) -> np.ndarray:
    """Exact (num_nodes, 15) orbit-count table."""
    return _orbits_from_dense(graph.dense_adjacency())


def _k4_per_node(A: np.ndarray) -> np.ndarray:
    # Each K4 through v is seen once per incident edge via the edges inside
    # the shared neighborhood, i.e. three times per node.
    n = A.shape[0]
    acc = np.zeros(n)
    B = A > 0.5
    us, vs = np.nonzero(np.triu(B, 1))
    for u, v in zip(us.tolist(), vs.tolist()):
        common = B[u] & B[v]
        cnt = int(common.sum())
        if cnt < 2:
            continue
        sub = A[np.ix_(common, common)]
        ec = sub.sum() / 2.0
        acc[u] += ec
        acc[v] += ec
    return acc / 3.0


def _orbits_from_dense(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    out = np.zeros((n, N_ORBITS), dtype=np.int64)
    if n == 0 or A.sum() == 0:
        return out
    d = A.sum(axis=1)
    A2 = A @ A
    Te = A * A2                      # triangles through each edge
    t = Te.sum(axis=1) / 2.0

    o0 = d
    o3 = t
    o2 = d * (d - 1) / 2.0 - t
    o1 = A @ d - d - 2.0 * t

    o14 = _k4_per_node(A)
    o13 = (Te * (Te - 1) / 2.0).sum(axis=1) - 3.0 * o14
    tri_cn = ((A @ Te) * A).sum(axis=1) / 2.0   # sum of |N(u) ∩ N(w)| over triangles (u,w) at v
    o12 = tri_cn - t - 3.0 * o14
    o11 = t * (d - 2.0) - 2.0 * o13 - 3.0 * o14
    o10 = Te @ d - 4.0 * t - 2.0 * o13 - 2.0 * o12 - 6.0 * o14
    o9 = A @ t - 2.0 * t - 2.0 * o12 - 3.0 * o14
    o7 = d * (d - 1) * (d - 2) / 6.0 - o11 - o13 - o14
    o6 = A @ ((d - 1) * (d - 2) / 2.0) - o9 - o10 - 2.0 * o12 - o13 - 3.0 * o14

    cycles4 = ((A2 * A2).sum(axis=1) - d * d - A @ d + d) / 2.0
    o8 = cycles4 - o12 - o13 - 3.0 * o14

    ni5 = (d - 1) * (A @ (d - 1)) - 2.0 * t
    o5 = ni5 - 2.0 * o8 - o10 - 2.0 * o11 - 2.0 * o12 - 4.0 * o13 - 6.0 * o14
    ni4 = A2 @ (d - 1) - d * (d - 1) - 2.0 * t
    o4 = ni4 - 2.0 * o8 - 2.0 * o9 - o10 - 4.0 * o12 - 2.0 * o13 - 6.0 * o14

    cols = [o0, o1, o2, o3, o4, o5, o6, o7, o8, o9, o10, o11, o12, o13, o14]
    table = np.column_stack(cols)
    return np.rint(table).astype(np.int64)


def total_orbit_histogram(graph: Graph) -> np.ndarray:
    """Graph-level 15-vector: orbit counts summed over all nodes."""
    return count_orbits(graph).sum(axis=0)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm == 0:
        return np.zeros_like(vec, dtype=np.float64)
    return vec / norm


def ego_signatures(graph: Graph, radius: int = EGO_RADIUS) -> np.ndarray:
    """Per-node structural signature: unit-normalized total orbit histogram
    of the node's ``radius``-hop ego-network (zero vector if it has no edges).
    """
    sigs = np.zeros((graph.num_nodes, N_ORBITS))
    local = np.full(graph.num_nodes, -1, dtype=np.int64)
    for v in range(graph.num_nodes):
        nodes = bfs_nodes(graph, [v], radius)
        local[nodes] = np.arange(len(nodes))
        sub = np.zeros((len(nodes), len(nodes)))
        for i, u in enumerate(nodes):
            nbrs = graph.neighbors(u)
            pos = local[nbrs]
            keep = pos >= 0
            sub[i, pos[keep]] = 1.0
        local[nodes] = -1
        hist = _orbits_from_dense(sub).sum(axis=0)
        sigs[v] = _unit(hist.astype(np.float64))
    return sigs


def edge_score(sig_i: np.ndarray, sig_j: np.ndarray) -> float:
    """Cosine similarity of two signatures, 0 if either is the zero vector."""
    a, b = _unit(np.asarray(sig_i, float)), _unit(np.asarray(sig_j, float))
    return float(np.clip(a @ b, 0.0, 1.0))


def domain_similarity(g1: Graph, g2: Graph) -> float:
    """Structural similarity of two graphs via their global orbit histograms.

    Histograms are L1-normalized then compared by cosine; edge-free graphs
    score 0 against anything.
    """
    if g1.num_nodes == 0 or g2.num_nodes == 0:
        raise ValueError("domain_similarity requires non-empty graphs")
    sims = []
    for g in (g1, g2):
        hist = total_orbit_histogram(g).astype(np.float64)
        total = hist.sum()
        sims.append(hist / total if total > 0 else hist)
    return edge_score(sims[0], sims[1])


# ---------------------------------------------------------------------------
# Disk caches. GDV tables are plain text; signature caches are keyed by the
# sha256 of the graph file they were computed from.
# ---------------------------------------------------------------------------

def graph_file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def save_gdv(path, gdv: np.ndarray) -> None:
    with open(path, "w") as fh:
        for v in range(gdv.shape[0]):
            fh.write(f"{v} " + " ".join(str(int(x)) for x in gdv[v]) + "\n")


def load_gdv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for ln in fh:
            parts = ln.split()
            if len(parts) != N_ORBITS + 1:
                raise ValueError(f"{path}: malformed gdv row")
            rows.append([int(x) for x in parts[1:]])
    return np.asarray(rows, dtype=np.int64)


def save_signatures(path, sigs: np.ndarray, graph_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"sigcache v1 hash {graph_hash} nodes {sigs.shape[0]} orbits {N_ORBITS}\n")
        for v in range(sigs.shape[0]):
            fh.write(f"{v} " + " ".join(repr(float(x)) for x in sigs[v]) + "\n")


def load_signatures(path, expected_hash: str):
    """Signature matrix if the cache is intact and matches the hash, else None."""
    try:
        with open(path) as fh:
            header = fh.readline().split()
            if (len(header) != 8 or header[0] != "sigcache" or header[1] != "v1"
                    or header[3] != expected_hash):
                return None
            n = int(header[5])
            sigs = np.zeros((n, N_ORBITS))
            count = 0
            for ln in fh:
                parts = ln.split()
                if len(parts) != N_ORBITS + 1:
                    return None
                sigs[int(parts[0])] = [float(x) for x in parts[1:]]
                count += 1
            if count != n:
                return None
            return sigs
    except (OSError, ValueError, IndexError):
        return None
