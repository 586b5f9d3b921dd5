"""Edge-type feature-preference message passing on heterogeneous graphs.

Pure numpy/scipy: a small tape autodiff, the graph data model, the layer and
model, Adam training, F1/ARI/NMI metrics and k-means.
"""

from .autodiff import Tape, Tensor, backward, grad_check
from .cluster import KMeansResult, kmeans
from .hetgraph import HeteroGraph, SplitSpec, load_dataset, make_split, save_dataset, synth_planted
from .layers import AggMode, EdgeTypeTable, LayerParams
from .metrics import MetricsReport, adjusted_rand_index, macro_f1, micro_f1, nmi, rand_index
from .model import ModelConfig, ModelParams, forward, init_for_graph, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "AggMode",
    "EdgeTypeTable",
    "HeteroGraph",
    "KMeansResult",
    "LayerParams",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "SplitSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainHistory",
    "adjusted_rand_index",
    "backward",
    "forward",
    "grad_check",
    "init_for_graph",
    "kmeans",
    "load_checkpoint",
    "load_dataset",
    "macro_f1",
    "make_split",
    "micro_f1",
    "nmi",
    "rand_index",
    "save_checkpoint",
    "save_dataset",
    "synth_planted",
    "train",
]
