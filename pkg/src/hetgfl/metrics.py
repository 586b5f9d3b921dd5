"""Classification (micro/macro F1) and clustering (RI, ARI, NMI) scores."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class ConfusionTally:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def k(self) -> int:
        return int(self.tp.shape[0])


def _as_indicator(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape:
        raise MetricError(f"label arrays differ in shape: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise MetricError("empty label arrays")
    if t.ndim == 2:
        return t.astype(bool), p.astype(bool)
    t = t.astype(np.int64)
    p = p.astype(np.int64)
    k = int(max(t.max(), p.max())) + 1
    eye = np.eye(k, dtype=bool)
    return eye[t], eye[p]


def tally(y_true, y_pred) -> ConfusionTally:
    """Per-class TP/FP/FN; 1-D inputs are class ids, 2-D inputs indicator matrices."""
    t, p = _as_indicator(y_true, y_pred)
    tp = np.sum(t & p, axis=0)
    fp = np.sum(~t & p, axis=0)
    fn = np.sum(t & ~p, axis=0)
    return ConfusionTally(tp, fp, fn)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def micro_f1(y_true, y_pred) -> float:
    c = tally(y_true, y_pred)
    return float(_f1(c.tp.sum(), c.fp.sum(), c.fn.sum()))


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of per-class F1 over classes ``0..k-1``.

    A class absent from both arrays scores 0.
    """
    c = tally(y_true, y_pred)
    return float(np.mean(_f1(c.tp, c.fp, c.fn)))


def paper_literal_f1(y_true, y_pred, average: str = "micro") -> float:
    """``k P R / (k^2 P + R)`` with P, R summed ("micro") or averaged ("macro")
    over per-class precision and recall. Kept for inspection only; it does not
    reduce to the usual F-measure."""
    c = tally(y_true, y_pred)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(c.tp + c.fp > 0, c.tp / (c.tp + c.fp), 0.0)
        rec = np.where(c.tp + c.fn > 0, c.tp / (c.tp + c.fn), 0.0)
    k = c.k
    if average == "micro":
        P, R = prec.sum(), rec.sum()
    elif average == "macro":
        P, R = prec.mean(), rec.mean()
    else:
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    denom = k * k * P + R
    return float(k * P * R / denom) if denom > 0 else 0.0


# --------------------------------------------------------------------------
# clustering


@dataclass(frozen=True)
class PartitionPair:
    truth: np.ndarray
    pred: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.truth)
        p = np.asarray(self.pred)
        if t.shape != p.shape or t.ndim != 1:
            raise MetricError(f"partitions must be equal-length 1-D arrays, got {t.shape} and {p.shape}")
        if t.size and (t.min() < 0 or p.min() < 0):
            raise MetricError("cluster ids must be nonnegative")
        object.__setattr__(self, "truth", t.astype(np.int64))
        object.__setattr__(self, "pred", p.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.truth.shape[0])

    def contingency(self) -> np.ndarray:
        _, ti = np.unique(self.truth, return_inverse=True)
        _, pi = np.unique(self.pred, return_inverse=True)
        table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
        np.add.at(table, (ti, pi), 1)
        return table


def _pair(a, b=None) -> PartitionPair:
    return a if isinstance(a, PartitionPair) else PartitionPair(np.asarray(a), np.asarray(b))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def rand_index(truth, pred=None) -> float:
    pair = _pair(truth, pred)
    n = pair.n
    if n < 2:
        raise MetricError("rand index needs at least 2 samples")
    table = pair.contingency()
    both = _comb2(table).sum()
    same_t = _comb2(table.sum(axis=1)).sum()
    same_p = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    apart_both = total - same_t - same_p + both
    return float((both + apart_both) / total)


def adjusted_rand_index(truth, pred=None) -> float:
    pair = _pair(truth, pred)
    n = pair.n
    if n < 2:
        raise MetricError("adjusted rand index needs at least 2 samples")
    table = pair.contingency()
    index = _comb2(table).sum()
    a = _comb2(table.sum(axis=1)).sum()
    b = _comb2(table.sum(axis=0)).sum()
    expected = a * b / _comb2(n)
    top = 0.5 * (a + b)
    if top == expected:
        if table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]:
            return 1.0
        raise MetricError("adjusted rand index undefined: max index equals its expectation")
    return float((index - expected) / (top - expected))


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def mutual_information(truth, pred=None) -> float:
    pair = _pair(truth, pred)
    table = pair.contingency().astype(np.float64)
    n = pair.n
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    nz = table > 0
    ratio = (n * table[nz]) / (rows @ cols)[nz]
    return float((table[nz] / n * np.log(ratio)).sum())


def nmi(truth, pred=None) -> float:
    """Mutual information over the arithmetic mean of both entropies (natural log).

    Two constant partitions have zero entropy; they describe the same
    grouping, so the score is 1.
    """
    pair = _pair(truth, pred)
    if pair.n < 1:
        raise MetricError("nmi needs at least one sample")
    table = pair.contingency()
    ht = _entropy(table.sum(axis=1), pair.n)
    hp = _entropy(table.sum(axis=0), pair.n)
    if ht + hp == 0.0:
        return 1.0
    value = mutual_information(pair) / ((ht + hp) / 2.0)
    return float(min(max(value, 0.0), 1.0))


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    micro_f1: float | None = None
    macro_f1: float | None = None
    ari: float | None = None
    nmi: float | None = None
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def classification_report(y_true, y_pred) -> MetricsReport:
    return MetricsReport(
        micro_f1=micro_f1(y_true, y_pred),
        macro_f1=macro_f1(y_true, y_pred),
        n_samples=int(np.asarray(y_true).shape[0]),
    )


def clustering_report(truth, pred) -> MetricsReport:
    pair = PartitionPair(np.asarray(truth), np.asarray(pred))
    return MetricsReport(ari=adjusted_rand_index(pair), nmi=nmi(pair), n_samples=pair.n)
