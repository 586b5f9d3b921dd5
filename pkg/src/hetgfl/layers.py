"""EdgeGFL layer: typed feature projection, edge-type relation vectors,
Hadamard-filtered messages and the three sum-aggregation variants."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hetgraph import Arcs

ATTN_SLOPE = 0.2
EDGE_INIT = float(np.sqrt(3.0))


class AggMode(str, enum.Enum):
    PLAIN_SUM = "plain-sum"
    NODE_RESIDUAL = "node-residual"
    EDGE_RESIDUAL = "edge-residual"


class ProjectionError(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


# --------------------------------------------------------------------------
# feature projection


@dataclass
class Projection:
    """Per-node-type ``W^{T_v}`` and bias mapping raw features to ``d0``."""

    weights: dict[int, Tensor]
    biases: dict[int, Tensor]

    @classmethod
    def init(cls, feature_dims: dict[int, int], d0: int, rng: np.random.Generator) -> "Projection":
        weights, biases = {}, {}
        for t in sorted(feature_dims):
            weights[t] = Tensor(glorot(rng, feature_dims[t], d0), requires_grad=True, name=f"proj.W.{t}")
            biases[t] = Tensor(np.zeros(d0), requires_grad=True, name=f"proj.b.{t}")
        return cls(weights, biases)


def feature_project(
    features: dict[int, np.ndarray],
    type_index: dict[int, np.ndarray],
    n: int,
    proj: Projection,
    slope: float = 0.01,
    nonlinear: bool = True,
) -> Tensor:
    """``H0 = LeakyReLU(F_t W_t + b_t)`` per node type, rows back in node order."""
    total = None
    for t, idx in type_index.items():
        if t not in proj.weights:
            raise ProjectionError(f"no projection for node type {t}")
        W = proj.weights[t]
        f = features[t]
        if f.shape[1] != W.shape[0]:
            raise ProjectionError(
                f"node type {t}: features have dim {f.shape[1]} but projection expects {W.shape[0]}"
            )
        if idx.size == 0:
            continue
        z = ad.add(ad.matmul(Tensor(f), W), proj.biases[t])
        part = ad.segment_sum(z, idx, n)
        total = part if total is None else ad.add(total, part)
    if total is None:
        d0 = next(iter(proj.weights.values())).shape[1]
        total = Tensor(np.zeros((n, d0)))
    return ad.leaky_relu(total, slope) if nonlinear else ad.identity(total)


# --------------------------------------------------------------------------
# edge types


@dataclass
class EdgeTypeTable:
    """Embedding rows ``r_hat`` and the dictionary resolving arcs to rows.

    ``keyed_by == "type"`` is the normal dictionary (one row per edge type).
    ``keyed_by == "edge"`` gives each undirected edge its own frozen random
    row, which removes the type information from the encoding.
    """

    embeddings: Tensor
    keyed_by: str = "type"

    @property
    def trainable(self) -> bool:
        return self.embeddings.requires_grad

    def rows(self, arcs: Arcs) -> np.ndarray:
        key = arcs.etype if self.keyed_by == "type" else arcs.edge_id
        if key.size and (key.min() < 0 or key.max() >= self.embeddings.shape[0]):
            raise KeyError(f"arc key outside edge table of {self.embeddings.shape[0]} rows")
        return key


def edge_type_init(
    n_edge_types: int,
    d_e: int,
    seed: int,
    mode: str = "typed",
    n_edges: int | None = None,
) -> EdgeTypeTable:
    if d_e < 1:
        raise ValueError(f"edge embedding dim must be >= 1, got {d_e}")
    rng = np.random.default_rng(seed)
    if mode == "typed":
        vals = rng.uniform(-EDGE_INIT, EDGE_INIT, size=(n_edge_types, d_e))
        return EdgeTypeTable(Tensor(vals, requires_grad=True, name="edge.table"), "type")
    if mode == "random-frozen":
        if n_edges is None:
            raise ValueError("random-frozen mode needs n_edges")
        vals = rng.uniform(-EDGE_INIT, EDGE_INIT, size=(max(n_edges, 1), d_e))
        return EdgeTypeTable(Tensor(vals, requires_grad=False, name="edge.table"), "edge")
    raise ValueError(f"unknown edge table mode {mode!r}")


def edge_relation_map(table: EdgeTypeTable, w_rel: Tensor, slope: float = 0.01) -> Tensor:
    """Per-row relation vectors ``LeakyReLU(r_hat @ w_rel)`` in node-feature space."""
    if table.embeddings.shape[1] != w_rel.shape[0]:
        raise ad.DimensionError(
            f"edge table dim {table.embeddings.shape[1]} does not match w_rel rows {w_rel.shape[0]}"
        )
    return ad.leaky_relu(ad.matmul(table.embeddings, w_rel), slope)


# --------------------------------------------------------------------------
# layer parameters


@dataclass
class LayerParams:
    w_rel: Tensor
    W: Tensor
    W_res: Tensor | None
    attn_dst: Tensor
    attn_src: Tensor
    attn_rel: Tensor
    beta: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        d_in, d_out = self.W.shape
        if (self.W_res is not None) != (d_in != d_out):
            raise ValueError("W_res must be present exactly when the layer changes dimension")

    @classmethod
    def init(cls, d_in: int, d_out: int, d_e: int, beta: float, rng: np.random.Generator, prefix: str = "") -> "LayerParams":
        def t(arr, name):
            return Tensor(arr, requires_grad=True, name=prefix + name)

        w_res = t(glorot(rng, d_in, d_out), "W_res") if d_in != d_out else None
        width = 2 * d_out + d_in
        return cls(
            w_rel=t(glorot(rng, d_e, d_in), "w_rel"),
            W=t(glorot(rng, d_in, d_out), "W"),
            W_res=w_res,
            attn_dst=t(glorot(rng, width, 1, (d_out, 1)), "attn_dst"),
            attn_src=t(glorot(rng, width, 1, (d_out, 1)), "attn_src"),
            attn_rel=t(glorot(rng, width, 1, (d_in, 1)), "attn_rel"),
            beta=beta,
        )

    def tensors(self) -> dict[str, Tensor]:
        out = {"w_rel": self.w_rel, "W": self.W}
        if self.W_res is not None:
            out["W_res"] = self.W_res
        out.update(attn_dst=self.attn_dst, attn_src=self.attn_src, attn_rel=self.attn_rel)
        return out


# --------------------------------------------------------------------------
# propagation / aggregation


def propagate(H: Tensor, arcs: Arcs, relations: Tensor | None = None, rows: np.ndarray | None = None) -> Tensor:
    """One message per arc: ``h_src * r`` elementwise.

    ``relations`` is either a table indexed by ``rows`` or, when ``rows`` is
    None, an explicit per-arc matrix. ``relations=None`` sends ``h_src``
    unfiltered (all-ones relation).
    """
    h_src = ad.gather_rows(H, arcs.src)
    if relations is None:
        return h_src
    if rows is not None:
        relations = ad.gather_rows(relations, rows)
    if relations.shape != h_src.shape:
        raise ad.DimensionError(f"per-arc relations {relations.shape} do not match messages {h_src.shape}")
    return ad.hadamard(h_src, relations)


def attention_scores(
    H: Tensor,
    arcs: Arcs,
    lp: LayerParams,
    table: EdgeTypeTable | None = None,
    rows: np.ndarray | None = None,
) -> Tensor:
    """Normalised attention ``alpha_hat`` per arc, shape ``(m, 1)``.

    Score is ``LeakyReLU(a . [W h_dst || W h_src || w_rel r_hat])``, softmaxed
    over each destination's incoming arcs. With ``table=None`` the edge term
    is dropped.
    """
    WH = ad.matmul(H, lp.W)
    s = ad.add(
        ad.gather_rows(ad.matmul(WH, lp.attn_dst), arcs.dst),
        ad.gather_rows(ad.matmul(WH, lp.attn_src), arcs.src),
    )
    if table is not None:
        per_row = ad.matmul(ad.matmul(table.embeddings, lp.w_rel), lp.attn_rel)
        s = ad.add(s, ad.gather_rows(per_row, table.rows(arcs) if rows is None else rows))
    return ad.segment_softmax(ad.leaky_relu(s, ATTN_SLOPE), arcs.dst, arcs.n)


def blend_attention(alpha_hat: Tensor, alpha_prev: Tensor | None, beta: float) -> Tensor:
    """``(1 - beta) * alpha_hat + beta * alpha_prev``."""
    if alpha_prev is None:
        return alpha_hat
    if alpha_prev.shape != alpha_hat.shape:
        raise ad.DimensionError(
            f"previous attention covers {alpha_prev.shape[0]} arcs, current {alpha_hat.shape[0]}"
        )
    return ad.add(ad.scale(alpha_hat, 1.0 - beta), ad.scale(alpha_prev, beta))


def aggregate(
    H: Tensor,
    messages: Tensor,
    arcs: Arcs,
    lp: LayerParams,
    mode: AggMode,
    alpha_hat: Tensor | None = None,
    alpha_prev: Tensor | None = None,
    slope: float = 0.01,
) -> tuple[Tensor, Tensor | None]:
    mode = AggMode(mode)
    if mode is AggMode.PLAIN_SUM:
        pooled = ad.segment_sum(messages, arcs.dst, arcs.n)
        return ad.leaky_relu(ad.matmul(pooled, lp.W), slope), None

    if alpha_hat is None:
        raise ValueError(f"{mode.value} aggregation needs attention scores")
    if mode is AggMode.EDGE_RESIDUAL:
        alpha = blend_attention(alpha_hat, alpha_prev, lp.beta)
    else:
        alpha = alpha_hat
    pooled = ad.segment_sum(ad.hadamard(messages, alpha), arcs.dst, arcs.n)
    d_in, d_out = lp.W.shape
    if d_in != d_out:
        if lp.W_res is None:
            raise ValueError(f"layer maps {d_in} -> {d_out} but has no W_res")
        residual = ad.matmul(H, lp.W_res)
    else:
        residual = H
    return ad.leaky_relu(ad.add(ad.matmul(pooled, lp.W), residual), slope), alpha


def edgegfl_layer(
    H: Tensor,
    arcs: Arcs,
    lp: LayerParams,
    table: EdgeTypeTable,
    mode: AggMode,
    alpha_prev: Tensor | None = None,
    slope: float = 0.01,
    filter_features: bool = True,
) -> tuple[Tensor, Tensor | None]:
    """Full layer: relation map, filtered propagation, aggregation.

    ``filter_features=False`` skips the edge-to-node mapping entirely: messages
    are unfiltered and attention ignores edge embeddings.
    """
    rows = table.rows(arcs)
    if filter_features:
        relations = edge_relation_map(table, lp.w_rel, slope)
        messages = propagate(H, arcs, relations, rows)
    else:
        messages = propagate(H, arcs)
    alpha_hat = None
    if AggMode(mode) is not AggMode.PLAIN_SUM:
        alpha_hat = attention_scores(H, arcs, lp, table if filter_features else None, rows)
    return aggregate(H, messages, arcs, lp, mode, alpha_hat, alpha_prev, slope)
