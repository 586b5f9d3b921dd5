"""Heterogeneous graph container, TSV dataset format and split handling.

A dataset directory holds::

    node.tsv   node_id<TAB>node_type[<TAB>f1,f2,...]
    edge.tsv   src<TAB>dst<TAB>edge_type
    label.tsv  node_id<TAB>c1[,c2,...]
    split.tsv  node_id<TAB>train|val|test        (optional)

Every edge line is one undirected edge; in memory it becomes two arcs that
share the edge type.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


class StratificationError(ValueError):
    pass


class GenerationError(ValueError):
    pass


class DegreeError(ValueError):
    pass


@dataclass(frozen=True)
class Arcs:
    """Directed arcs ``src -> dst``; ``edge_id`` points back to the undirected edge."""

    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    edge_id: np.ndarray
    n: int

    def __len__(self) -> int:
        return int(self.src.shape[0])

    def permuted(self, order: np.ndarray) -> "Arcs":
        return Arcs(self.src[order], self.dst[order], self.etype[order], self.edge_id[order], self.n)


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    node_type: np.ndarray
    features: dict[int, np.ndarray]
    edges: np.ndarray
    labels: np.ndarray
    labeled: np.ndarray
    n_node_types: int
    n_edge_types: int
    multi_label: bool = False
    masks: dict[str, np.ndarray] | None = None
    featureless: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return int(self.node_type.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.labels.shape[1])

    @cached_property
    def type_index(self) -> dict[int, np.ndarray]:
        """Node ids of each node type, ascending; rows of ``features[t]`` follow it."""
        return {t: np.flatnonzero(self.node_type == t) for t in range(self.n_node_types)}

    @cached_property
    def arcs(self) -> Arcs:
        e = self.edges
        m = e.shape[0]
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        etype = np.concatenate([e[:, 2], e[:, 2]])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((src, dst))
        return Arcs(src[order], dst[order], etype[order], eid[order], self.n)

    @cached_property
    def indptr(self) -> np.ndarray:
        counts = np.bincount(self.arcs.dst, minlength=self.n)
        return np.concatenate([[0], np.cumsum(counts)])

    def neighbors(self, i: int) -> np.ndarray:
        """N_i: sources of arcs arriving at ``i``."""
        return self.arcs.src[self.indptr[i] : self.indptr[i + 1]]

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def gcn_norm(self, i: int, j: int) -> float:
        deg = self.degree
        return gcn_norm(int(deg[i]), int(deg[j]))

    def feature_dims(self) -> dict[int, int]:
        return {t: int(f.shape[1]) for t, f in self.features.items()}

    def class_ids(self) -> np.ndarray:
        """First class of each node (-1 when unlabeled)."""
        ids = np.where(self.labeled, self.labels.argmax(axis=1), -1)
        return ids.astype(np.int64)

    def with_masks(self, masks: dict[str, np.ndarray]) -> "HeteroGraph":
        return replace(self, masks={k: np.asarray(v, dtype=bool) for k, v in masks.items()})

    def counts(self) -> dict[str, int]:
        return {
            "nodes": self.n,
            "node_types": int(np.unique(self.node_type).size),
            "edges": self.n_edges,
            "edge_types": int(np.unique(self.edges[:, 2]).size) if self.n_edges else 0,
            "classes": self.n_classes,
        }

    def validate(self) -> None:
        n = self.n
        if self.edges.size:
            if self.edges.min() < 0 or self.edges[:, :2].max() >= n:
                raise DatasetError("edge endpoint out of range")
            if self.edges[:, 2].max() >= self.n_edge_types:
                raise DatasetError("edge type out of range")
        if n and (self.node_type.min() < 0 or self.node_type.max() >= self.n_node_types):
            raise DatasetError("node type out of range")
        for t, idx in self.type_index.items():
            f = self.features.get(t)
            if f is None or f.shape[0] != idx.size:
                raise DatasetError(f"feature matrix for node type {t} does not match its node count")
        if self.labels.shape[0] != n or self.labeled.shape[0] != n:
            raise DatasetError("label matrix does not match node count")
        if not self.multi_label and np.any(self.labels[self.labeled].sum(axis=1) != 1):
            raise DatasetError("single-label graph has a labeled row without exactly one class")
        if self.masks is not None:
            stacked = np.stack([self.masks[s] for s in SPLITS])
            if np.any(stacked.sum(axis=0) > 1):
                raise DatasetError("split masks overlap")
            if not np.array_equal(stacked.any(axis=0), self.labeled):
                raise DatasetError("split masks must cover exactly the labeled nodes")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.node_type, self.edges, self.labels, self.labeled.astype(np.int8)):
            h.update(np.ascontiguousarray(arr).tobytes())
        for t in sorted(self.features):
            h.update(np.ascontiguousarray(self.features[t]).tobytes())
        return h.hexdigest()


def with_self_loops(arcs: Arcs) -> Arcs:
    """Arcs plus one ``i -> i`` arc per node (edge type 0, edge id -1)."""
    loops = np.arange(arcs.n)
    return Arcs(
        np.concatenate([arcs.src, loops]),
        np.concatenate([arcs.dst, loops]),
        np.concatenate([arcs.etype, np.zeros(arcs.n, dtype=arcs.etype.dtype)]),
        np.concatenate([arcs.edge_id, -np.ones(arcs.n, dtype=arcs.edge_id.dtype)]),
        arcs.n,
    )


def arc_degrees(arcs: Arcs) -> np.ndarray:
    return np.bincount(arcs.dst, minlength=arcs.n)


def gcn_norm(deg_i: int, deg_j: int) -> float:
    """Symmetric averaging factor ``1 / sqrt(|N_i| |N_j|)``."""
    if deg_i < 1 or deg_j < 1:
        raise DegreeError(f"gcn_norm undefined for degree-zero node (degrees {deg_i}, {deg_j})")
    return 1.0 / math.sqrt(deg_i * deg_j)


def gcn_arc_norms(arcs: Arcs) -> np.ndarray:
    deg = arc_degrees(arcs)
    if np.any(deg[arcs.src] < 1) or np.any(deg[arcs.dst] < 1):
        raise DegreeError("arc touches a degree-zero node")
    return 1.0 / np.sqrt(deg[arcs.src].astype(float) * deg[arcs.dst])


# --------------------------------------------------------------------------
# loading / saving


def _read_lines(path: Path):
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            yield lineno, line.split("\t")


def _int(tok: str, path: Path, lineno: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise DatasetError(f"{path.name}:{lineno}: expected integer, got {tok!r}") from None
    if v < 0:
        raise DatasetError(f"{path.name}:{lineno}: negative id {v}")
    return v


def load_dataset(directory) -> HeteroGraph:
    d = Path(directory)
    for name in ("node.tsv", "edge.tsv", "label.tsv"):
        if not (d / name).is_file():
            raise DatasetError(f"missing {name} in {d}")

    path = d / "node.tsv"
    types: dict[int, int] = {}
    feats: dict[int, list[float] | None] = {}
    for lineno, parts in _read_lines(path):
        if len(parts) not in (2, 3):
            raise DatasetError(f"{path.name}:{lineno}: expected 2 or 3 fields, got {len(parts)}")
        nid = _int(parts[0], path, lineno)
        if nid in types:
            raise DatasetError(f"{path.name}:{lineno}: duplicate node id {nid}")
        types[nid] = _int(parts[1], path, lineno)
        if len(parts) == 3 and parts[2] != "":
            try:
                feats[nid] = [float(x) for x in parts[2].split(",")]
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: bad feature list") from None
        else:
            feats[nid] = None
    n = len(types)
    if sorted(types) != list(range(n)):
        raise DatasetError(f"{path.name}: node ids must be exactly 0..{n - 1}")
    node_type = np.array([types[i] for i in range(n)], dtype=np.int64)
    n_node_types = int(node_type.max()) + 1 if n else 0

    features: dict[int, np.ndarray] = {}
    featureless = set()
    for t in range(n_node_types):
        ids = np.flatnonzero(node_type == t)
        rows = [feats[i] for i in ids]
        given = [r is not None for r in rows]
        if not any(given):
            featureless.add(t)
            onehot = np.zeros((ids.size, n_node_types))
            onehot[:, t] = 1.0
            features[t] = onehot
            continue
        if not all(given):
            raise DatasetError(f"node type {t}: features given for some nodes but not all")
        dims = {len(r) for r in rows}
        if len(dims) != 1:
            raise DatasetError(f"node type {t}: inconsistent feature dimensions {sorted(dims)}")
        features[t] = np.array(rows, dtype=np.float64)

    path = d / "edge.tsv"
    edges = []
    for lineno, parts in _read_lines(path):
        if len(parts) != 3:
            raise DatasetError(f"{path.name}:{lineno}: expected 3 fields, got {len(parts)}")
        s, t, k = (_int(p, path, lineno) for p in parts)
        for v in (s, t):
            if v >= n:
                raise DatasetError(f"{path.name}:{lineno}: dangling node id {v} (graph has {n} nodes)")
        if s == t:
            raise DatasetError(f"{path.name}:{lineno}: self-loop on node {s}")
        edges.append((s, t, k))
    edges_arr = np.array(edges, dtype=np.int64).reshape(-1, 3)
    n_edge_types = int(edges_arr[:, 2].max()) + 1 if len(edges) else 0

    path = d / "label.tsv"
    label_sets: dict[int, list[int]] = {}
    for lineno, parts in _read_lines(path):
        if len(parts) != 2:
            raise DatasetError(f"{path.name}:{lineno}: expected 2 fields, got {len(parts)}")
        nid = _int(parts[0], path, lineno)
        if nid >= n:
            raise DatasetError(f"{path.name}:{lineno}: dangling node id {nid} (graph has {n} nodes)")
        if nid in label_sets:
            raise DatasetError(f"{path.name}:{lineno}: duplicate label line for node {nid}")
        label_sets[nid] = [_int(c, path, lineno) for c in parts[1].split(",")]
    n_classes = max((max(v) for v in label_sets.values()), default=-1) + 1
    labels = np.zeros((n, n_classes))
    labeled = np.zeros(n, dtype=bool)
    multi = False
    for nid, cs in label_sets.items():
        labels[nid, cs] = 1.0
        labeled[nid] = True
        multi |= len(set(cs)) > 1

    masks = None
    path = d / "split.tsv"
    if path.is_file():
        masks = {s: np.zeros(n, dtype=bool) for s in SPLITS}
        for lineno, parts in _read_lines(path):
            if len(parts) != 2 or parts[1] not in masks:
                raise DatasetError(f"{path.name}:{lineno}: expected node_id<TAB>train|val|test")
            nid = _int(parts[0], path, lineno)
            if nid >= n:
                raise DatasetError(f"{path.name}:{lineno}: dangling node id {nid} (graph has {n} nodes)")
            masks[parts[1]][nid] = True

    return HeteroGraph(
        node_type=node_type,
        features=features,
        edges=edges_arr,
        labels=labels,
        labeled=labeled,
        n_node_types=n_node_types,
        n_edge_types=n_edge_types,
        multi_label=multi,
        masks=masks,
        featureless=frozenset(featureless),
    )


def save_dataset(graph: HeteroGraph, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    row_of = np.empty(graph.n, dtype=np.int64)
    for t, idx in graph.type_index.items():
        row_of[idx] = np.arange(idx.size)
    with open(d / "node.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i in range(graph.n):
            t = int(graph.node_type[i])
            if t in graph.featureless:
                fh.write(f"{i}\t{t}\n")
            else:
                vals = ",".join(repr(float(x)) for x in graph.features[t][row_of[i]])
                fh.write(f"{i}\t{t}\t{vals}\n")
    with open(d / "edge.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for s, t, k in graph.edges.tolist():
            fh.write(f"{s}\t{t}\t{k}\n")
    with open(d / "label.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i in np.flatnonzero(graph.labeled):
            cs = ",".join(str(c) for c in np.flatnonzero(graph.labels[i]))
            fh.write(f"{i}\t{cs}\n")
    split = d / "split.tsv"
    if graph.masks is not None:
        with open(split, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(graph.n):
                for s in SPLITS:
                    if graph.masks[s][i]:
                        fh.write(f"{i}\t{s}\n")
    elif split.exists():
        split.unlink()


def dataset_fingerprint(directory) -> str:
    """SHA-256 over the raw bytes of the dataset files."""
    h = hashlib.sha256()
    for name in ("node.tsv", "edge.tsv", "label.tsv", "split.tsv"):
        p = Path(directory) / name
        if p.is_file():
            h.update(name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.24
    val_frac: float = 0.06
    test_frac: float = 0.70
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr):
            raise ValueError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


CLUSTERING_SPLIT = (0.03, 0.06, 0.91)


def make_split(labels: np.ndarray, labeled: np.ndarray, spec: SplitSpec) -> dict[str, np.ndarray]:
    """Stratified train/val/test masks over the labeled nodes.

    Sizes are ``floor(N * train_frac)`` and ``floor(N * val_frac)``; test takes
    the rest. Stratification interleaves each shuffled class by its relative
    rank so every prefix of the ordering is close to class-proportional.
    Multi-label rows are stratified by their lowest class id.
    """
    labels = np.asarray(labels)
    labeled = np.asarray(labeled, dtype=bool)
    ids = np.flatnonzero(labeled)
    n = labels.shape[0]
    cls = labels[ids].argmax(axis=1)
    rng = np.random.default_rng(spec.seed)
    present = np.unique(cls)
    for c in range(labels.shape[1]):
        if c not in present:
            raise StratificationError(f"class {c} has no labeled node")
    keys = np.empty(ids.size)
    for c in present:
        members = np.flatnonzero(cls == c)
        if members.size < len(SPLITS):
            raise StratificationError(f"class {c} has {members.size} labeled nodes; need at least {len(SPLITS)}")
        order = rng.permutation(members.size)
        keys[members[order]] = (np.arange(members.size) + 0.5) / members.size
    tiebreak = rng.permutation(ids.size)
    ordered = ids[np.lexsort((tiebreak, keys))]
    total = ids.size
    # tolerance keeps e.g. 100 * 0.29 = 28.999... at 29
    n_train = math.floor(total * spec.train_frac + 1e-9)
    n_val = math.floor(total * spec.val_frac + 1e-9)
    masks = {s: np.zeros(n, dtype=bool) for s in SPLITS}
    masks["train"][ordered[:n_train]] = True
    masks["val"][ordered[n_train : n_train + n_val]] = True
    masks["test"][ordered[n_train + n_val :]] = True
    return masks


# --------------------------------------------------------------------------
# synthetic fixture


def synth_planted(
    n: int,
    n_node_types: int,
    n_edge_types: int,
    n_classes: int,
    homophily: float,
    seed: int,
    edges_per_node: int = 6,
    p_intra: float = 0.8,
    feature_noise: float = 0.1,
) -> HeteroGraph:
    """Planted-partition heterogeneous graph whose classes live in edge types.

    Classes are balanced. Each node opens ``edges_per_node`` edges; a partner
    is drawn from the node's own class with probability ``p_intra``. An
    intra-class edge of class ``c`` gets edge type ``c`` with probability
    ``homophily`` and a uniform random type otherwise; inter-class edges get
    uniform random types. Node features are class-independent noise around
    a per-type mean, so only edge types reveal the class.
    """
    if n < 2 * n_classes or n_classes < 1:
        raise GenerationError(f"need n >= 2 * n_classes, got n={n}, n_classes={n_classes}")
    if not 0.0 < homophily <= 1.0:
        raise GenerationError(f"homophily must lie in (0, 1], got {homophily}")
    if n_edge_types < n_classes:
        raise GenerationError("need at least one edge type per class")
    if n_node_types < 1 or n_node_types > n:
        raise GenerationError(f"cannot place {n_node_types} node types on {n} nodes")
    if edges_per_node < 1:
        raise GenerationError("edges_per_node must be >= 1")

    rng = np.random.default_rng(seed)
    cls = rng.permutation(np.arange(n) % n_classes)
    node_type = rng.permutation(np.arange(n) % n_node_types)
    members = [np.flatnonzero(cls == c) for c in range(n_classes)]
    if n_classes > 1:
        others = [np.flatnonzero(cls != c) for c in range(n_classes)]

    seen: set[tuple[int, int]] = set()
    edges = []
    for i in range(n):
        c = cls[i]
        for _ in range(edges_per_node):
            intra = n_classes == 1 or rng.random() < p_intra
            pool = members[c] if intra else others[c]
            j = int(pool[rng.integers(pool.size)])
            if j == i:
                continue
            key = (min(i, j), max(i, j))
            if key in seen:
                continue
            seen.add(key)
            if intra and rng.random() < homophily:
                k = int(c)
            else:
                k = int(rng.integers(n_edge_types))
            edges.append((i, j, k))
    edges_arr = np.array(edges, dtype=np.int64).reshape(-1, 3)

    features = {}
    for t in range(n_node_types):
        size = int(np.sum(node_type == t))
        dim = 4 + 2 * t
        features[t] = 1.0 + feature_noise * rng.standard_normal((size, dim))

    labels = np.zeros((n, n_classes))
    labels[np.arange(n), cls] = 1.0
    return HeteroGraph(
        node_type=node_type.astype(np.int64),
        features=features,
        edges=edges_arr,
        labels=labels,
        labeled=np.ones(n, dtype=bool),
        n_node_types=n_node_types,
        n_edge_types=n_edge_types,
    )
