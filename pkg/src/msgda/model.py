"""Network architecture: shared GCN encoder, cross-domain GAT with edge
weights, attention-gated channel fusion, classifier and domain critic.

All parameter groups live in :class:`ModelParams`; forward passes are pure
functions of (tape, inputs, params) so replaying them on fresh tapes is safe.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .autodiff import Tape, Tensor
from .graph import Graph

LEAKY_SLOPE = 0.2       # attention activation slope
EDGE_FEAT_DIM = 8       # width of the lifted scalar edge weight
MASK_OFF = -1e30        # additive mask killing non-edges before row softmax


@dataclasses.dataclass(frozen=True)
class ModelDims:
    feature_dim: int
    hidden: int = 64
    edge_dim: int = EDGE_FEAT_DIM


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class ModelParams:
    """All trainable tensors, addressable by name and by optimizer group."""

    ENCODER = ("gcn1_w", "gcn1_b", "gcn2_w", "gcn2_b")
    CROSS = ("gat_w", "gat_b", "gat_attn", "gat_edge_w", "fuse_w")
    CLASSIFIER = ("cls1_w", "cls1_b", "cls2_w", "cls2_b")
    CRITIC = ("critic_w", "critic_b")

    def __init__(self, dims: ModelDims, tensors: dict):
        self.dims = dims
        self._tensors = tensors

    @classmethod
    def shapes(cls, dims: ModelDims) -> dict:
        d, h, e = dims.feature_dim, dims.hidden, dims.edge_dim
        return {
            "gcn1_w": (d, h), "gcn1_b": (1, h),
            "gcn2_w": (h, h), "gcn2_b": (1, h),
            "gat_w": (h, h), "gat_b": (1, h),
            "gat_attn": (2 * h + e, 1), "gat_edge_w": (1, e),
            "fuse_w": (2 * h, 2),
            "cls1_w": (h, h), "cls1_b": (1, h),
            "cls2_w": (h, 2), "cls2_b": (1, 2),
            "critic_w": (h, 1), "critic_b": (1, 1),
        }

    @classmethod
    def init(cls, dims: ModelDims, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in cls.shapes(dims).items():
            if name.endswith("_b"):
                value = np.zeros(shape)
            elif name == "fuse_w":
                value = np.zeros(shape)  # fusion starts at an even 0.5/0.5 gate
            else:
                value = _glorot(rng, *shape)
            tensors[name] = Tensor(value)
        return cls(dims, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def named(self) -> dict:
        return dict(self._tensors)

    def group(self, names) -> list:
        return [self._tensors[n] for n in names]

    def generator_params(self) -> list:
        return self.group(self.ENCODER + self.CROSS + self.CLASSIFIER)

    def critic_params(self) -> list:
        return self.group(self.CRITIC)

    def all_params(self) -> list:
        return list(self._tensors.values())

    def fingerprint(self, names=None) -> bytes:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(names or self._tensors):
            h.update(name.encode())
            h.update(self._tensors[name].value.tobytes())
        return h.digest()


def normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """Self-loop renormalized adjacency D^-1/2 (A + I) D^-1/2 in CSR form."""
    n = graph.num_nodes
    src = np.repeat(np.arange(n), graph.degrees())
    adj = sp.csr_matrix(
        (np.ones(len(src) + n), (np.concatenate([src, np.arange(n)]),
                                 np.concatenate([graph.indices, np.arange(n)]))),
        shape=(n, n),
    )
    inv_sqrt = 1.0 / np.sqrt(graph.degrees() + 1.0)
    deg = sp.diags(inv_sqrt)
    return (deg @ adj @ deg).tocsr()


def gcn_forward(tape: Tape, adj_norm: sp.csr_matrix, x: Tensor, params: ModelParams) -> Tensor:
    """Two in-domain message-passing layers; ReLU inside, identity on top."""
    h1 = tape.relu(tape.add(tape.spmm(adj_norm, tape.matmul(x, params["gcn1_w"])),
                            params["gcn1_b"]))
    return tape.add(tape.spmm(adj_norm, tape.matmul(h1, params["gcn2_w"])),
                    params["gcn2_b"])


def gat_cross_forward(tape: Tape, z_in: Tensor, edge_weights: np.ndarray,
                      mask: np.ndarray, params: ModelParams) -> Tensor:
    """One attention layer over the cross-domain topology.

    ``edge_weights`` is a dense (B, B) matrix of scores in [0, 1] (diagonal
    forced to 1 for the self edge); ``mask`` marks which entries participate
    in each row's softmax (cross-domain edges plus the diagonal).
    """
    b = z_in.shape[0]
    if edge_weights.shape != (b, b) or mask.shape != (b, b):
        raise ValueError("edge weight / mask shapes must be (B, B)")
    if edge_weights.min() < 0.0 or edge_weights.max() > 1.0:
        raise ValueError("edge weights must lie in [0, 1]")
    h = params.dims.hidden
    ew = edge_weights.copy()
    np.fill_diagonal(ew, 1.0)

    zw = tape.matmul(z_in, params["gat_w"])
    attn = params["gat_attn"]
    a_src = tape.gather_rows(attn, np.arange(h))
    a_dst = tape.gather_rows(attn, np.arange(h, 2 * h))
    a_edge = tape.gather_rows(attn, np.arange(2 * h, 2 * h + params.dims.edge_dim))

    ones_col = tape.constant(np.ones((b, 1)))
    ones_row = tape.constant(np.ones((1, b)))
    src_part = tape.matmul(tape.matmul(zw, a_src), ones_row)             # s_i broadcast
    dst_part = tape.matmul(ones_col, tape.transpose(tape.matmul(zw, a_dst)))
    edge_coef = tape.matmul(params["gat_edge_w"], a_edge)                # scalar
    edge_part = tape.hadamard(
        tape.matmul(tape.matmul(ones_col, edge_coef), ones_row),
        tape.constant(ew),
    )
    scores = tape.leaky_relu(tape.add(tape.add(src_part, dst_part), edge_part),
                             LEAKY_SLOPE)
    masked = tape.add(scores, tape.constant(np.where(mask, 0.0, MASK_OFF)))
    alpha = tape.row_softmax(masked)
    return tape.relu(tape.add(tape.matmul(alpha, zw), params["gat_b"]))


_SEL0 = np.array([[1.0], [0.0]])
_SEL1 = np.array([[0.0], [1.0]])


def fuse(tape: Tape, z_in_domain: Tensor, z_cross: Tensor, params: ModelParams) -> Tensor:
    """Attention-gated convex combination of the two embedding channels."""
    h = z_in_domain.shape[1]
    cat = tape.concat_cols(z_in_domain, z_cross)
    beta = tape.row_softmax(tape.matmul(cat, params["fuse_w"]))
    ones_row = tape.constant(np.ones((1, h)))
    w1 = tape.matmul(tape.matmul(beta, tape.constant(_SEL0)), ones_row)
    w2 = tape.matmul(tape.matmul(beta, tape.constant(_SEL1)), ones_row)
    return tape.add(tape.hadamard(w1, z_in_domain), tape.hadamard(w2, z_cross))


def fusion_gates(tape: Tape, z_in_domain: Tensor, z_cross: Tensor, params: ModelParams) -> Tensor:
    """The (B, 2) gate coefficients, exposed for inspection and tests."""
    cat = tape.concat_cols(z_in_domain, z_cross)
    return tape.row_softmax(tape.matmul(cat, params["fuse_w"]))


def classify(tape: Tape, z: Tensor, params: ModelParams) -> Tensor:
    """Two-layer classifier head returning 2-class logits."""
    h1 = tape.relu(tape.add(tape.matmul(z, params["cls1_w"]), params["cls1_b"]))
    return tape.add(tape.matmul(h1, params["cls2_w"]), params["cls2_b"])


def class_probabilities(tape: Tape, logits: Tensor) -> Tensor:
    return tape.row_softmax(logits)


def criticize(tape: Tape, z: Tensor, params: ModelParams) -> Tensor:
    """Affine critic mapping each embedding row to one real number."""
    return tape.add(tape.matmul(z, params["critic_w"]), params["critic_b"])


# ---------------------------------------------------------------------------
# Checkpoints: versioned text dump, exact float round trip via hex encoding.
# ---------------------------------------------------------------------------

_CKPT_HEADER = "msgda-params v1"


def save_params(params: ModelParams, path) -> None:
    dims = params.dims
    with open(path, "w") as fh:
        fh.write(f"{_CKPT_HEADER}\n")
        fh.write(f"dims {dims.feature_dim} {dims.hidden} {dims.edge_dim}\n")
        for name, tensor in params.named().items():
            rows, cols = tensor.shape
            fh.write(f"param {name} {rows} {cols}\n")
            for row in tensor.value:
                fh.write(" ".join(float(x).hex() for x in row) + "\n")


def load_params(path) -> ModelParams:
    with open(path) as fh:
        if fh.readline().strip() != _CKPT_HEADER:
            raise ValueError(f"{path}: not a parameter checkpoint")
        dim_line = fh.readline().split()
        dims = ModelDims(int(dim_line[1]), int(dim_line[2]), int(dim_line[3]))
        tensors = {}
        line = fh.readline()
        while line:
            parts = line.split()
            if parts[0] != "param":
                raise ValueError(f"{path}: malformed checkpoint line {line!r}")
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            value = np.empty((rows, cols))
            for r in range(rows):
                value[r] = [float.fromhex(tok) for tok in fh.readline().split()]
            tensors[name] = Tensor(value)
            line = fh.readline()
    expected = set(ModelParams.shapes(dims))
    if set(tensors) != expected:
        raise ValueError(f"{path}: checkpoint parameter set mismatch")
    return ModelParams(dims, tensors)
