"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it;
:func:`backward` then replays the tape in reverse, accumulating gradients
into every tensor that requires them. Outside of a tape the same functions
just compute values, which is what evaluation paths use.

    tape = Tape()
    with tape:
        loss = sum_all(hadamard(x, x))
    backward(loss, tape)
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_ids = itertools.count()
_local = threading.local()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A row cannot be normalised because its norm vanishes."""

    def __init__(self, row: int, norm: float):
        super().__init__(f"row {row} has norm {norm:.3g}, cannot L2-normalise")
        self.row = row


class ContractError(ValueError):
    """A precondition of the autodiff API was violated."""


class EvaluationError(ArithmeticError):
    """A function under gradient check produced a non-finite value."""


class Tensor:
    """A value buffer plus a same-shaped gradient buffer."""

    __slots__ = ("values", "_grad", "requires_grad", "node_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None, copy: bool = True):
        self.values = np.array(values, dtype=np.float64) if copy else np.asarray(values, dtype=np.float64)
        self._grad = None  # allocated on first use; reads as zeros until then
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = value

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64).reshape(self.values.shape)
        else:
            self._grad += g

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other, like=self), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(np.full(like.shape, float(x)))
    return Tensor(x)


@dataclass
class _Op:
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of executed operations (define-by-run)."""

    def __init__(self):
        self.ops: list[_Op] = []
        self._produced: set[int] = set()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule) -> None:
        self.ops.append(_Op(inputs, out, rule))
        self._produced.add(out.node_id)

    def __contains__(self, t: Tensor) -> bool:
        return t.node_id in self._produced

    def __len__(self) -> int:
        return len(self.ops)

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()


def active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _emit(values: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs), copy=False)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, rule)
    return out


def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``.

    Returns a map from ``node_id`` to gradient for every leaf tensor that
    requires grad and was touched by the tape.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss not in tape:
        raise ContractError("loss was not produced on this tape")
    for op in tape.ops:
        op.out.zero_grad()
    loss.grad = np.ones_like(loss.values)
    leaves: dict[int, Tensor] = {}
    for op in reversed(tape.ops):
        if not op.out.requires_grad or op.out._grad is None:
            continue  # unreachable from the loss
        grads = op.backward(op.out.grad)
        for inp, g in zip(op.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            inp._accumulate(g)
            if inp not in tape:
                leaves[inp.node_id] = inp
    return {nid: t.grad for nid, t in leaves.items()}


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    ok = False
    if a.values.ndim == 2:
        n, d = a.shape
        ok = b.shape in {(d,), (1, d), (n, 1)}
    elif a.values.ndim == 1:
        ok = b.shape in {(1,), ()}
    if not ok:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    av, bv = a.values, b.values

    def rule(g):
        return (
            g @ bv.T if a.requires_grad else None,
            av.T @ g if b.requires_grad else None,
        )

    return _emit(av @ bv, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row or column vector broadcast over ``a``."""
    _check_broadcast(a, b, "add")

    def rule(g):
        return g, _unbroadcast(g, b.shape)

    return _emit(a.values + b.values, (a, b), rule)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a row or column vector broadcast over ``a``."""
    _check_broadcast(a, b, "hadamard")
    av, bv = a.values, b.values

    def rule(g):
        return (
            g * bv if a.requires_grad else None,
            _unbroadcast(g * av, b.shape) if b.requires_grad else None,
        )

    return _emit(av * bv, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.values * c, (a,), lambda g: (g * c,))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    gate = np.where(a.values >= 0.0, 1.0, slope)
    return _emit(a.values * gate, (a,), lambda g: (g * gate,))


def identity(a: Tensor) -> Tensor:
    return _emit(a.values.copy(), (a,), lambda g: (g,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def softmax_rows(a: Tensor) -> Tensor:
    x = a.values
    if x.ndim != 2 or min(x.shape) < 1:
        raise DimensionError(f"softmax_rows expects a non-empty matrix, got {a.shape}")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _emit(s, (a,), rule)


def l2_normalize_rows(a: Tensor, tol: float = 1e-12) -> Tensor:
    x = a.values
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(norms[:, 0] < tol)
    if bad.size:
        raise DegenerateRowError(int(bad[0]), float(norms[bad[0], 0]))
    y = x / norms

    def rule(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _emit(y, (a,), rule)


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log of ``max(a, floor)``; clamped entries get zero gradient."""
    x = a.values
    clamped = x < floor
    safe = np.where(clamped, floor, x)

    def rule(g):
        return (np.where(clamped, 0.0, g / safe),)

    return _emit(np.log(safe), (a,), rule)


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        r = np.sqrt(a.values)

    def rule(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(r > 0, g / (2.0 * r), 0.0),)

    return _emit(r, (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.array(a.values.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """``a[index]`` along the first axis."""
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]

    def rule(g):
        return (_segment_matrix(index, n) @ g,)

    return _emit(a.values[index], (a,), rule)


def _segment_matrix(index: np.ndarray, n: int) -> sp.csr_matrix:
    m = index.shape[0]
    return sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))


def segment_sum(a: Tensor, index: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``a`` into ``n`` buckets given by ``index``; empty buckets are zero."""
    index = np.asarray(index, dtype=np.intp)
    if index.shape[0] != a.shape[0]:
        raise DimensionError(f"segment_sum: {index.shape[0]} indices for {a.shape[0]} rows")
    out = _segment_matrix(index, n) @ a.values
    return _emit(np.asarray(out), (a,), lambda g: (g[index],))


def segment_softmax(a: Tensor, index: np.ndarray, n: int) -> Tensor:
    """Softmax of an ``(m, 1)`` score column within each bucket of ``index``."""
    index = np.asarray(index, dtype=np.intp)
    x = a.values.reshape(-1)
    if x.shape[0] != index.shape[0]:
        raise DimensionError(f"segment_softmax: {index.shape[0]} indices for {a.shape} scores")
    top = np.full(n, -np.inf)
    np.maximum.at(top, index, x)
    e = np.exp(x - top[index])
    denom = np.bincount(index, weights=e, minlength=n)
    s = e / denom[index]

    def rule(g):
        gs = g.reshape(-1) * s
        pooled = np.bincount(index, weights=gs, minlength=n)
        return ((gs - s * pooled[index]).reshape(a.shape),)

    return _emit(s.reshape(a.shape), (a,), rule)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current values of ``params``.
    Error per entry is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.zero_grad()
    tape = Tape()
    with tape:
        loss = f()
    if not np.isfinite(loss.values).all():
        raise EvaluationError("loss is not finite at the base point")
    backward(loss, tape)
    analytic = [p.grad.copy() for p in params]

    def evaluate() -> float:
        v = f().item()
        if not np.isfinite(v):
            raise EvaluationError("loss is not finite under perturbation")
        return v

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = evaluate()
            flat[k] = orig - eps
            down = evaluate()
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(gflat[k] - numeric) / max(1.0, abs(gflat[k]))
            worst = max(worst, err)
    return worst
