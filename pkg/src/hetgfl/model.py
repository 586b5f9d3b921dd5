"""Stacked EdgeGFL model with L2-normalised output head and training loss."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hetgraph import HeteroGraph
from .layers import (
    AggMode,
    EdgeTypeTable,
    LayerParams,
    Projection,
    edge_type_init,
    edgegfl_layer,
    feature_project,
    glorot,
)

ABLATIONS = ("no_fgl", "no_l2", "no_nle", "no_ei")
LOSS_MODES = ("softmax-ce", "sigmoid-bce")
LOG_FLOOR = 1e-12
CHECKPOINT_FORMAT = "hetgfl-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    dims: list[int] = field(default_factory=lambda: [64, 64, 64])
    d_e: int = 64
    agg_mode: AggMode = AggMode.EDGE_RESIDUAL
    beta: float = 0.05
    leaky_slope: float = 0.01
    loss_mode: str = "softmax-ce"
    ablations: frozenset[str] = frozenset()
    weight_decay: float = 0.0
    unsquared_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.agg_mode = AggMode(self.agg_mode)
        self.ablations = frozenset(a.replace("-", "_") for a in self.ablations)
        if len(self.dims) < 2:
            raise ValueError("need at least one layer (dims d0..dL with L >= 1)")
        if any(d < 1 for d in self.dims) or self.d_e < 1:
            raise ValueError(f"dimensions must be positive, got dims={self.dims}, d_e={self.d_e}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        unknown = self.ablations - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablations {sorted(unknown)}")

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agg_mode"] = self.agg_mode.value
        d["ablations"] = sorted(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "ablations": frozenset(d.get("ablations", ()))})


@dataclass
class ModelParams:
    projection: Projection
    layers: list[LayerParams]
    table: EdgeTypeTable
    W_z: Tensor

    def named(self, trainable_only: bool = True) -> dict[str, Tensor]:
        """Every parameter tensor by stable name (Θ)."""
        out: dict[str, Tensor] = {}
        for t in sorted(self.projection.weights):
            out[f"proj.W.{t}"] = self.projection.weights[t]
            out[f"proj.b.{t}"] = self.projection.biases[t]
        if self.table.trainable or not trainable_only:
            out["edge.table"] = self.table.embeddings
        for l, lp in enumerate(self.layers):
            for k, v in lp.tensors().items():
                out[f"layer{l}.{k}"] = v
        out["W_z"] = self.W_z
        return out

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.named(False).items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.named(False).items():
            v.values[...] = snap[k]


def init_params(
    feature_dims: dict[int, int],
    n_edge_types: int,
    n_classes: int,
    config: ModelConfig,
    n_edges: int = 0,
) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    dims = config.dims
    projection = Projection.init(feature_dims, dims[0], rng)
    if "no_ei" in config.ablations:
        table = edge_type_init(n_edge_types, config.d_e, config.seed + 101, "random-frozen", n_edges=n_edges)
    else:
        table = edge_type_init(n_edge_types, config.d_e, config.seed + 101, "typed")
    layers = [
        LayerParams.init(dims[l], dims[l + 1], config.d_e, config.beta, rng, prefix=f"layer{l}.")
        for l in range(config.n_layers)
    ]
    W_z = Tensor(glorot(rng, dims[-1], n_classes), requires_grad=True, name="W_z")
    return ModelParams(projection, layers, table, W_z)


def init_for_graph(graph: HeteroGraph, config: ModelConfig) -> ModelParams:
    return init_params(graph.feature_dims(), graph.n_edge_types, graph.n_classes, config, graph.n_edges)


def embed(graph: HeteroGraph, params: ModelParams, config: ModelConfig) -> Tensor:
    """Final-layer node representations ``H^L`` (before normalisation)."""
    ab = config.ablations
    H = feature_project(
        graph.features,
        graph.type_index,
        graph.n,
        params.projection,
        config.leaky_slope,
        nonlinear="no_nle" not in ab,
    )
    arcs = graph.arcs
    alpha = None
    for lp in params.layers:
        H, alpha = edgegfl_layer(
            H,
            arcs,
            lp,
            params.table,
            config.agg_mode,
            alpha_prev=alpha,
            slope=config.leaky_slope,
            filter_features="no_fgl" not in ab,
        )
    return H


def forward(graph: HeteroGraph, params: ModelParams, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Returns ``(O, Z)``: output embeddings and class probabilities."""
    H = embed(graph, params, config)
    O = H if "no_l2" in config.ablations else ad.l2_normalize_rows(H)
    logits = ad.matmul(O, params.W_z)
    if config.loss_mode == "softmax-ce":
        Z = ad.softmax_rows(logits)
    else:
        Z = ad.sigmoid(logits)
    return O, Z


def regularizer(params: ModelParams, unsquared: bool = False) -> Tensor:
    total = None
    for p in params.named().values():
        sq = ad.sum_all(ad.hadamard(p, p))
        total = sq if total is None else ad.add(total, sq)
    return ad.sqrt(total) if unsquared else total


def loss(
    Z: Tensor,
    Y: np.ndarray,
    train_mask: np.ndarray,
    params: ModelParams | None = None,
    weight_decay: float = 0.0,
    mode: str = "softmax-ce",
    unsquared: bool = False,
) -> Tensor:
    """Summed cross-entropy over the training rows plus weight decay."""
    idx = np.flatnonzero(train_mask)
    if idx.size == 0:
        raise ValueError("empty training mask")
    if np.isnan(Z.values).any():
        raise FloatingPointError("NaN in predictions")
    Zt = ad.gather_rows(Z, idx)
    Yt = Tensor(np.asarray(Y, dtype=np.float64)[idx])
    data = ad.sum_all(ad.hadamard(Yt, ad.log(Zt, LOG_FLOOR)))
    if mode == "sigmoid-bce":
        neg = ad.sum_all(ad.hadamard(Tensor(1.0 - Yt.values), ad.log(1.0 - Zt, LOG_FLOOR)))
        data = ad.add(data, neg)
    out = ad.scale(data, -1.0)
    if weight_decay > 0 and params is not None:
        out = ad.add(out, ad.scale(regularizer(params, unsquared), weight_decay))
    return out


def predict(Z: np.ndarray, mode: str = "softmax-ce") -> np.ndarray:
    """Class ids (single-label) or a 0/1 indicator matrix (multi-label, threshold 0.5)."""
    Z = np.asarray(Z)
    if mode == "softmax-ce":
        return Z.argmax(axis=1)
    return (Z >= 0.5).astype(np.int64)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, config: ModelConfig, meta: dict) -> None:
    tensors = {
        k: {"shape": list(v.shape), "values": v.values.reshape(-1).tolist()}
        for k, v in params.named(trainable_only=False).items()
    }
    doc = {"format": CHECKPOINT_FORMAT, "config": config.to_dict(), "meta": meta, "tensors": tensors}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        config = ModelConfig.from_dict(doc["config"])
        meta = doc["meta"]
        feature_dims = {int(k): int(v) for k, v in meta["feature_dims"].items()}
        params = init_params(feature_dims, meta["n_edge_types"], meta["n_classes"], config, meta["n_edges"])
        named = params.named(trainable_only=False)
        if set(named) != set(doc["tensors"]):
            raise CheckpointError(f"{path}: tensor names do not match the configured model")
        for k, t in named.items():
            rec = doc["tensors"][k]
            arr = np.array(rec["values"], dtype=np.float64)
            if list(t.shape) != rec["shape"] or arr.size != t.size:
                raise CheckpointError(f"{path}: tensor {k} has shape {rec['shape']}, expected {list(t.shape)}")
            t.values[...] = arr.reshape(t.shape)
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: cannot load checkpoint ({exc})") from exc
    return params, config, meta


def graph_meta(graph: HeteroGraph) -> dict:
    return {
        "feature_dims": {str(t): d for t, d in graph.feature_dims().items()},
        "n_edge_types": graph.n_edge_types,
        "n_classes": graph.n_classes,
        "n_edges": graph.n_edges,
        "n_nodes": graph.n,
    }
