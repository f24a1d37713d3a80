"""Reverse-mode differentiation over 2-D float64 matrices.

Every op builds a node holding its forward value and a closure that scatters
the incoming gradient to its parents. ``Tensor.backward`` runs the closures
in reverse topological order. Training math is float64 throughout so that
finite-difference gradient checks are meaningful; float32 appears only in
serialization.

Ops never mutate their inputs; with a caller-owned RNG for dropout, forward
passes over disjoint data are safe to run concurrently. Gradient buffers of
shared leaves are the one mutable resource and need exclusive access during
a backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tpcgcn.rng import SeededRng
from tpcgcn.sparse import ShapeError, SparseMatrix


class Tensor:
    """A matrix node on the tape. Leaves carry persistent gradients."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D matrices, got shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(p for p in parents if p.requires_grad)
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    def backward(self) -> None:
        """Backpropagate from this scalar (1x1) node into all leaves.

        Leaf gradients accumulate across calls until explicitly zeroed.
        """
        if self.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {self.value.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in topo:
            node._ensure_grad()
        self.grad += 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Tensor:
    return Tensor(value)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op} shape mismatch: {a.value.shape} vs {b.value.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Dense product; gradients are g @ B^T and A^T @ g."""
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} x {b.value.shape}")
    value = a.value @ b.value

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._ensure_grad()
            a.grad += g @ b.value.T
        if b.requires_grad:
            b._ensure_grad()
            b.grad += a.value.T @ g

    return Tensor(value, parents=(a, b), backward=backward)


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    """Sparse-dense product. The sparse operand is constant (non-learnable)."""
    value = s.matmul_dense(d.value)

    def backward(g: np.ndarray) -> None:
        if d.requires_grad:
            d._ensure_grad()
            d.grad += s.transpose().matmul_dense(g)

    return Tensor(value, parents=(d,), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    value = a.value + b.value

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._ensure_grad()
            a.grad += g
        if b.requires_grad:
            b._ensure_grad()
            b.grad += g

    return Tensor(value, parents=(a, b), backward=backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    value = a.value - b.value

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._ensure_grad()
            a.grad += g
        if b.requires_grad:
            b._ensure_grad()
            b.grad -= g

    return Tensor(value, parents=(a, b), backward=backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1xK bias row to every row of x."""
    if bias.value.shape != (1, x.value.shape[1]):
        raise ShapeError(
            f"bias shape {bias.value.shape} does not broadcast over {x.value.shape}"
        )
    value = x.value + bias.value

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._ensure_grad()
            x.grad += g
        if bias.requires_grad:
            bias._ensure_grad()
            bias.grad += g.sum(axis=0, keepdims=True)

    return Tensor(value, parents=(x, bias), backward=backward)


def add_const(x: Tensor, c: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g

    return Tensor(x.value + c, parents=(x,), backward=backward)


def neg(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad -= g

    return Tensor(-x.value, parents=(x,), backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape matrices."""
    _check_same_shape("mul", a, b)
    value = a.value * b.value

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._ensure_grad()
            a.grad += g * b.value
        if b.requires_grad:
            b._ensure_grad()
            b.grad += g * a.value

    return Tensor(value, parents=(a, b), backward=backward)


def mul_const(x: Tensor, c: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g * c

    return Tensor(x.value * c, parents=(x,), backward=backward)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is fixed to 0."""
    mask = x.value > 0
    value = np.where(mask, x.value, 0.0)

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g * mask

    return Tensor(value, parents=(x,), backward=backward)


def tanh_elem(x: Tensor) -> Tensor:
    t = np.tanh(x.value)

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g * (1.0 - t * t)

    return Tensor(t, parents=(x,), backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    s = np.empty_like(v)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    s[~pos] = e / (1.0 + e)

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g * s * (1.0 - s)

    return Tensor(s, parents=(x,), backward=backward)


def sum_all(x: Tensor) -> Tensor:
    value = np.array([[x.value.sum()]])

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g[0, 0]

    return Tensor(value, parents=(x,), backward=backward)


def mean_rows(x: Tensor, positions: Sequence[int]) -> Tensor:
    """Mean of a set of rows, as a 1xK matrix.

    Positions are treated as an unordered set: they are sorted before
    summation, so any permutation of the same positions gives a bit-identical
    result.
    """
    pos = np.sort(np.asarray(list(positions), dtype=np.int64))
    if pos.size == 0:
        raise ValueError("mean_rows needs at least one position")
    if pos[0] < 0 or pos[-1] >= x.value.shape[0]:
        raise IndexError(f"row position out of range for {x.value.shape[0]} rows")
    value = x.value[pos].mean(axis=0, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        np.add.at(x.grad, pos, g / pos.size)

    return Tensor(value, parents=(x,), backward=backward)


def take_rows(x: Tensor, positions: Sequence[int]) -> Tensor:
    """Select rows by position (order preserved, duplicates allowed)."""
    pos = np.asarray(list(positions), dtype=np.int64)
    if pos.size and (pos.min() < 0 or pos.max() >= x.value.shape[0]):
        raise IndexError(f"row position out of range for {x.value.shape[0]} rows")
    value = x.value[pos]

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        np.add.at(x.grad, pos, g)

    return Tensor(value, parents=(x,), backward=backward)


def row_scale(x: Tensor, a: Tensor) -> Tensor:
    """Scale row i of x by the scalar a[i, 0]."""
    if a.value.shape != (x.value.shape[0], 1):
        raise ShapeError(
            f"row_scale needs a {x.value.shape[0]}x1 scale, got {a.value.shape}"
        )
    value = x.value * a.value

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._ensure_grad()
            x.grad += g * a.value
        if a.requires_grad:
            a._ensure_grad()
            a.grad += (g * x.value).sum(axis=1, keepdims=True)

    return Tensor(value, parents=(x, a), backward=backward)


def dropout(x: Tensor, rate: float, rng: SeededRng, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Identity when not training or rate is 0; the mask is drawn from the
    caller's rng and kept for the backward pass.
    """
    if rate < 0 or rate >= 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    u = rng.uniform(x.value.size).reshape(x.value.shape)
    mask = (u >= rate) / (1.0 - rate)
    value = x.value * mask

    def backward(g: np.ndarray) -> None:
        x._ensure_grad()
        x.grad += g * mask

    return Tensor(value, parents=(x,), backward=backward)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array, with max-subtraction. Forward only."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor, labels: Sequence[int]
) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy of row-wise softmax against integer class labels.

    Returns the scalar loss node and the (detached) probability matrix.
    The gradient is (probs - onehot) / n.
    """
    lab = np.asarray(list(labels), dtype=np.int64)
    n, k = logits.value.shape
    if n == 0 or lab.shape != (n,):
        raise ValueError(f"need one label per row: {n} rows, {lab.shape} labels")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True)
    probs = e / denom
    logprobs = shifted - np.log(denom)
    loss_value = -logprobs[np.arange(n), lab].mean()

    def backward(g: np.ndarray) -> None:
        logits._ensure_grad()
        delta = probs.copy()
        delta[np.arange(n), lab] -= 1.0
        logits.grad += g[0, 0] * delta / n

    loss = Tensor(np.array([[loss_value]]), parents=(logits,), backward=backward)
    return loss, probs.copy()
