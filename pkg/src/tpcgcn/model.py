"""Model forward passes: embedding reduction, GCN layers, fusion, attention.

Two model families share the building blocks:

* ``TpcgcnModel``: reduction, two GCN layers (hidden sizes 100 then 2 by
  default), dropout between them, and a softmax over each post's fusion
  vector. The second layer is linear and two-dimensional, so no extra head
  is needed.
* ``DtpcModel``: two structurally identical branches (32 then 16 by
  default) with independent parameters, a topic head reading first-layer
  fusion vectors, a controversy head reading second-layer fusion vectors,
  a shared attention scorer producing per-post branch weights, and a final
  linear head over the fused vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from tpcgcn import autodiff as ad
from tpcgcn.autodiff import Tensor
from tpcgcn.data import EmbeddingTable
from tpcgcn.graph import TpcGraph, ValidationError, fusion_matrix, normalize_adjacency
from tpcgcn.params import Parameter, ParameterStore, glorot_init
from tpcgcn.rng import SeededRng
from tpcgcn.sparse import SparseMatrix


@dataclass
class PreparedGraph:
    """A topic graph bundled with everything a forward pass needs."""

    graph: TpcGraph
    a_hat: SparseMatrix
    fusion: SparseMatrix
    post_ids: list[str]
    labels: np.ndarray
    x_raw: Tensor
    topic_id: str

    @property
    def n_posts(self) -> int:
        return len(self.post_ids)


def prepare_graph(
    graph: TpcGraph, labels_by_post: Mapping[str, int], table: EmbeddingTable
) -> PreparedGraph:
    """Normalize adjacency, build the fusion matrix, and stack raw features."""
    rows = np.stack(
        [table.get(node.id).astype(np.float64) for node in graph.nodes], axis=0
    )
    labels = np.asarray(
        [labels_by_post[pid] for pid in graph.post_ids], dtype=np.int64
    )
    return PreparedGraph(
        graph=graph,
        a_hat=normalize_adjacency(graph),
        fusion=fusion_matrix(graph),
        post_ids=graph.post_ids,
        labels=labels,
        x_raw=Tensor(rows),
        topic_id=graph.topic_id,
    )


def reduce_embeddings(x_raw: Tensor, w: Parameter, b: Parameter) -> Tensor:
    """Dense layer with ReLU that maps raw features to the model dimension."""
    return ad.relu(ad.add_bias(ad.matmul(x_raw, w), b))


def gcn_layer(
    h: Tensor,
    a_hat: SparseMatrix,
    w: Parameter,
    b: Parameter,
    activation: str = "relu",
) -> Tensor:
    """One graph convolution: activation(A_hat @ H @ W + b)."""
    out = ad.add_bias(ad.matmul(ad.spmm(a_hat, h), w), b)
    if activation == "relu":
        return ad.relu(out)
    if activation == "none":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def fuse_post(h: Tensor, post_position: int, comment_positions: Sequence[int]) -> Tensor:
    """Mean of a post row and its comment rows; just the post row if no comments."""
    return ad.mean_rows(h, [post_position, *comment_positions])


@dataclass(frozen=True)
class TpcgcnShape:
    raw_dim: int
    reduced_dim: int = 300
    hidden1: int = 100
    hidden2: int = 2


class TpcgcnModel:
    """Parameter handles for the single-branch model."""

    def __init__(self, store: ParameterStore, shape: TpcgcnShape, dropout: float = 0.35):
        self.store = store
        self.shape = shape
        self.dropout = dropout

    @classmethod
    def build(cls, shape: TpcgcnShape, rng: SeededRng, dropout: float = 0.35) -> "TpcgcnModel":
        store = ParameterStore()
        glorot_init(store, "reduction.w", shape.raw_dim, shape.reduced_dim, rng)
        store.add("reduction.b", np.zeros((1, shape.reduced_dim)))
        glorot_init(store, "gcn1.w", shape.reduced_dim, shape.hidden1, rng)
        store.add("gcn1.b", np.zeros((1, shape.hidden1)))
        glorot_init(store, "gcn2.w", shape.hidden1, shape.hidden2, rng)
        store.add("gcn2.b", np.zeros((1, shape.hidden2)))
        return cls(store, shape, dropout)

    @classmethod
    def from_store(cls, store: ParameterStore, dropout: float = 0.35) -> "TpcgcnModel":
        w_red = store["reduction.w"].value
        w1 = store["gcn1.w"].value
        w2 = store["gcn2.w"].value
        shape = TpcgcnShape(
            raw_dim=w_red.shape[0],
            reduced_dim=w_red.shape[1],
            hidden1=w1.shape[1],
            hidden2=w2.shape[1],
        )
        return cls(store, shape, dropout)


@dataclass
class TpcForward:
    logits: Tensor
    probs: np.ndarray
    post_ids: list[str]


def tpcgcn_forward(
    prep: PreparedGraph,
    model: TpcgcnModel,
    rng: SeededRng | None = None,
    training: bool = False,
) -> TpcForward:
    """Full single-branch pass; per-post logits are fusion vectors of H2."""
    s = model.store
    x = reduce_embeddings(prep.x_raw, s["reduction.w"], s["reduction.b"])
    h1 = gcn_layer(x, prep.a_hat, s["gcn1.w"], s["gcn1.b"], "relu")
    if training:
        if rng is None:
            raise ValueError("training forward needs an rng for dropout")
        h1 = ad.dropout(h1, model.dropout, rng, training=True)
    h2 = gcn_layer(h1, prep.a_hat, s["gcn2.w"], s["gcn2.b"], "none")
    logits = ad.spmm(prep.fusion, h2)
    return TpcForward(logits=logits, probs=ad.softmax_rows(logits.value), post_ids=prep.post_ids)


@dataclass(frozen=True)
class DtpcShape:
    raw_dim: int
    n_topics: int
    reduced_dim: int = 300
    hidden1: int = 32
    hidden2: int = 16
    attn_dim: int = 16


class BranchModel:
    """One branch of the disentangled model (id "U" or "R")."""

    def __init__(self, store: ParameterStore, branch_id: str, shape: DtpcShape, dropout: float = 0.4):
        if branch_id not in ("U", "R"):
            raise ValueError(f"branch id must be 'U' or 'R', got {branch_id!r}")
        self.store = store
        self.branch_id = branch_id
        self.shape = shape
        self.dropout = dropout

    def param_names(self) -> list[str]:
        prefix = f"{self.branch_id}."
        return [n for n in self.store.names() if n.startswith(prefix)]

    def _p(self, suffix: str) -> Parameter:
        return self.store[f"{self.branch_id}.{suffix}"]

    @staticmethod
    def build_params(store: ParameterStore, branch_id: str, shape: DtpcShape, rng: SeededRng) -> None:
        pre = f"{branch_id}."
        glorot_init(store, pre + "reduction.w", shape.raw_dim, shape.reduced_dim, rng)
        store.add(pre + "reduction.b", np.zeros((1, shape.reduced_dim)))
        glorot_init(store, pre + "gcn1.w", shape.reduced_dim, shape.hidden1, rng)
        store.add(pre + "gcn1.b", np.zeros((1, shape.hidden1)))
        glorot_init(store, pre + "gcn2.w", shape.hidden1, shape.hidden2, rng)
        store.add(pre + "gcn2.b", np.zeros((1, shape.hidden2)))
        glorot_init(store, pre + "topic_head.w", shape.hidden1, shape.n_topics, rng)
        store.add(pre + "topic_head.b", np.zeros((1, shape.n_topics)))
        glorot_init(store, pre + "contro_head.w", shape.hidden2, 2, rng)
        store.add(pre + "contro_head.b", np.zeros((1, 2)))


@dataclass
class BranchForward:
    topic_logits: Tensor
    contro_logits: Tensor
    fusion_vectors: Tensor
    post_ids: list[str]


def branch_forward(
    prep: PreparedGraph,
    branch: BranchModel,
    rng: SeededRng | None = None,
    training: bool = False,
) -> BranchForward:
    """One branch pass: topic logits from H1 fusion, controversy from H2 fusion.

    The topic head reads the first layer's fusion vectors in every stage;
    dropout applies only on the path into the second layer.
    """
    x = reduce_embeddings(prep.x_raw, branch._p("reduction.w"), branch._p("reduction.b"))
    h1 = gcn_layer(x, prep.a_hat, branch._p("gcn1.w"), branch._p("gcn1.b"), "relu")
    topic_in = ad.spmm(prep.fusion, h1)
    topic_logits = ad.add_bias(
        ad.matmul(topic_in, branch._p("topic_head.w")), branch._p("topic_head.b")
    )
    h1_d = h1
    if training:
        if rng is None:
            raise ValueError("training forward needs an rng for dropout")
        h1_d = ad.dropout(h1, branch.dropout, rng, training=True)
    h2 = gcn_layer(h1_d, prep.a_hat, branch._p("gcn2.w"), branch._p("gcn2.b"), "none")
    f_b = ad.spmm(prep.fusion, h2)
    contro_logits = ad.add_bias(
        ad.matmul(f_b, branch._p("contro_head.w")), branch._p("contro_head.b")
    )
    return BranchForward(
        topic_logits=topic_logits,
        contro_logits=contro_logits,
        fusion_vectors=f_b,
        post_ids=prep.post_ids,
    )


def attention_fuse(
    f_u: Tensor, f_r: Tensor, w_f: Parameter, b_f: Parameter, v: Parameter
) -> tuple[Tensor, Tensor, Tensor]:
    """Score each branch's fusion vectors and mix them per row.

    One shared scorer F(f) = v^T tanh(f W_F + b_F) is applied to both
    branches; the two scores per row pass through a softmax. With two
    branches that softmax reduces to a sigmoid of the score difference,
    which keeps alpha_U + alpha_R exactly 1. Returns (fused, alpha_u,
    alpha_r), each with one row per post.
    """
    if f_u.value.shape != f_r.value.shape:
        raise ValueError(
            f"branch fusion vectors disagree: {f_u.value.shape} vs {f_r.value.shape}"
        )

    def score(f: Tensor) -> Tensor:
        return ad.matmul(ad.tanh_elem(ad.add_bias(ad.matmul(f, w_f), b_f)), v)

    alpha_u = ad.sigmoid(ad.sub(score(f_u), score(f_r)))
    alpha_r = ad.add_const(ad.neg(alpha_u), 1.0)
    fused = ad.add(ad.row_scale(f_u, alpha_u), ad.row_scale(f_r, alpha_r))
    return fused, alpha_u, alpha_r


class DtpcModel:
    """Two branches plus the attention scorer and final classifier."""

    def __init__(self, store: ParameterStore, shape: DtpcShape, dropout: float = 0.4):
        self.store = store
        self.shape = shape
        self.u = BranchModel(store, "U", shape, dropout)
        self.r = BranchModel(store, "R", shape, dropout)

    @classmethod
    def build(cls, shape: DtpcShape, rng: SeededRng, dropout: float = 0.4) -> "DtpcModel":
        store = ParameterStore()
        BranchModel.build_params(store, "U", shape, rng)
        BranchModel.build_params(store, "R", shape, rng)
        glorot_init(store, "attention.wf", shape.hidden2, shape.attn_dim, rng)
        store.add("attention.bf", np.zeros((1, shape.attn_dim)))
        glorot_init(store, "attention.v", shape.attn_dim, 1, rng)
        glorot_init(store, "final_head.w", shape.hidden2, 2, rng)
        store.add("final_head.b", np.zeros((1, 2)))
        return cls(store, shape, dropout)

    @classmethod
    def from_store(cls, store: ParameterStore, dropout: float = 0.4) -> "DtpcModel":
        w_red = store["U.reduction.w"].value
        w1 = store["U.gcn1.w"].value
        w2 = store["U.gcn2.w"].value
        shape = DtpcShape(
            raw_dim=w_red.shape[0],
            n_topics=store["U.topic_head.w"].value.shape[1],
            reduced_dim=w_red.shape[1],
            hidden1=w1.shape[1],
            hidden2=w2.shape[1],
            attn_dim=store["attention.wf"].value.shape[1],
        )
        return cls(store, shape, dropout)

    def branch(self, branch_id: str) -> BranchModel:
        return {"U": self.u, "R": self.r}[branch_id]


@dataclass
class DtpcForward:
    logits: Tensor
    probs: np.ndarray
    alpha: np.ndarray
    branch_u: BranchForward
    branch_r: BranchForward
    post_ids: list[str]


def dtpcgcn_forward(
    prep: PreparedGraph,
    model: DtpcModel,
    rng: SeededRng | None = None,
    training: bool = False,
) -> DtpcForward:
    """Both branches, per-post attention fusion, final classifier.

    ``alpha`` holds (alpha_U, alpha_R) per post for export. The U branch
    always consumes dropout randomness first, keeping runs reproducible.
    """
    out_u = branch_forward(prep, model.u, rng, training)
    out_r = branch_forward(prep, model.r, rng, training)
    s = model.store
    fused, alpha_u, alpha_r = attention_fuse(
        out_u.fusion_vectors,
        out_r.fusion_vectors,
        s["attention.wf"],
        s["attention.bf"],
        s["attention.v"],
    )
    logits = ad.add_bias(ad.matmul(fused, s["final_head.w"]), s["final_head.b"])
    alpha = np.concatenate([alpha_u.value, alpha_r.value], axis=1)
    return DtpcForward(
        logits=logits,
        probs=ad.softmax_rows(logits.value),
        alpha=alpha,
        branch_u=out_u,
        branch_r=out_r,
        post_ids=prep.post_ids,
    )


def model_kind_of_store(store: ParameterStore) -> str:
    """Identify which family a checkpoint holds from its parameter names."""
    names = set(store.names())
    if "attention.wf" in names:
        return "dtpcgcn"
    if "reduction.w" in names:
        return "tpcgcn"
    if any(n.startswith(("U.", "R.")) for n in names):
        return "branch"
    raise ValidationError("checkpoint does not match any known model family")


def load_model_for_eval(store: ParameterStore):
    """Instantiate the right model wrapper for an evaluation checkpoint."""
    kind = model_kind_of_store(store)
    if kind == "dtpcgcn":
        return DtpcModel.from_store(store)
    if kind == "tpcgcn":
        return TpcgcnModel.from_store(store)
    branch_id = "U" if any(n.startswith("U.") for n in store.names()) else "R"
    w_red = store[f"{branch_id}.reduction.w"].value
    shape = DtpcShape(
        raw_dim=w_red.shape[0],
        n_topics=store[f"{branch_id}.topic_head.w"].value.shape[1],
        reduced_dim=w_red.shape[1],
        hidden1=store[f"{branch_id}.gcn1.w"].value.shape[1],
        hidden2=store[f"{branch_id}.gcn2.w"].value.shape[1],
    )
    return BranchModel(store, branch_id, shape)
