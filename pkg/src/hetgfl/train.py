"""Full-batch training with Adam and validation-based early stopping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hetgraph import HeteroGraph
from .metrics import macro_f1, micro_f1
from .model import ModelConfig, ModelParams, forward, init_for_graph, loss, predict

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0
    log_path: str | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_micro_f1: float
    val_macro_f1: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.records)

    @property
    def train_loss(self) -> list[float]:
        return [r.train_loss for r in self.records]


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping."""

    def __init__(self, params: dict[str, Tensor], lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        for k, p in self.params.items():
            if not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient for parameter {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.values -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def evaluate(graph: HeteroGraph, params: ModelParams, config: ModelConfig, split: str) -> dict:
    """Micro/macro F1 and loss on one split, no tape."""
    _, Z = forward(graph, params, config)
    mask = graph.masks[split]
    pred = predict(Z.values, config.loss_mode)
    if config.loss_mode == "softmax-ce":
        truth = graph.labels.argmax(axis=1)
    else:
        truth = graph.labels.astype(np.int64)
    return {
        "loss": loss(Z, graph.labels, mask, mode=config.loss_mode).item(),
        "micro_f1": micro_f1(truth[mask], pred[mask]),
        "macro_f1": macro_f1(truth[mask], pred[mask]),
        "n_samples": int(mask.sum()),
    }


def train(
    graph: HeteroGraph,
    model_config: ModelConfig,
    train_config: TrainConfig,
    params: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train on ``graph.masks['train']``; returns the best-validation parameters."""
    if graph.masks is None or not graph.masks["train"].any():
        raise TrainingError("graph has no training nodes")
    if params is None:
        params = init_for_graph(graph, model_config)
    named = params.named()
    opt = Adam(named, train_config.lr, train_config.adam_beta1, train_config.adam_beta2, train_config.adam_eps)
    history = TrainHistory()
    best_f1, best_snap, stale = -np.inf, params.snapshot(), 0
    sink = open(train_config.log_path, "w") if train_config.log_path else None
    try:
        for epoch in range(train_config.max_epochs):
            start = time.perf_counter()
            params.zero_grad()
            tape = ad.Tape()
            try:
                with tape:
                    _, Z = forward(graph, params, model_config)
                    L = loss(
                        Z,
                        graph.labels,
                        graph.masks["train"],
                        params,
                        model_config.weight_decay,
                        model_config.loss_mode,
                        model_config.unsquared_norm,
                    )
            except (FloatingPointError, ad.DegenerateRowError) as exc:
                raise TrainingError(f"loss diverged at epoch {epoch}: {exc}") from exc
            train_loss = L.item()
            if not np.isfinite(train_loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            ad.backward(L, tape)
            opt.step()

            val = evaluate(graph, params, model_config, "val")
            rec = EpochRecord(
                epoch, train_loss, val["loss"], val["micro_f1"], val["macro_f1"], time.perf_counter() - start
            )
            history.records.append(rec)
            if sink:
                sink.write(json.dumps(asdict(rec)) + "\n")
            log.debug("epoch %d loss %.5f val micro-F1 %.4f", epoch, train_loss, val["micro_f1"])

            if rec.val_micro_f1 > best_f1:
                best_f1, best_snap, stale = rec.val_micro_f1, params.snapshot(), 0
                history.best_epoch = epoch
            else:
                stale += 1
                if stale >= train_config.patience:
                    break
    finally:
        if sink:
            sink.close()
    params.restore(best_snap)
    return params, history


def epoch_seconds(graph: HeteroGraph, model_config: ModelConfig, repeats: int = 5) -> float:
    """Median wall time of one forward + backward + update pass."""
    params = init_for_graph(graph, model_config)
    opt = Adam(params.named())
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        params.zero_grad()
        tape = ad.Tape()
        with tape:
            _, Z = forward(graph, params, model_config)
            L = loss(Z, graph.labels, graph.masks["train"], mode=model_config.loss_mode)
        ad.backward(L, tape)
        opt.step()
        times.append(time.perf_counter() - start)
    return float(np.median(times))
