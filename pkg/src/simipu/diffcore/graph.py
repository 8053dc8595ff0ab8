"""Reverse-mode autodiff tape over dense numpy arrays.

The graph is a flat tape: every operation appends one entry in execution
order, which is already a valid topological order of the DAG, and the
backward pass replays the tape in reverse. Arrays are never mutated in
place once they participate in a graph, so each entry's captured values
stay valid until the graph is dropped.
"""
from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DimensionError

Backward = Callable[[np.ndarray], None]

_node_ids = itertools.count()
_active_graphs: list["Graph"] = []


class DiffArray:
    """Dense numeric array with a same-shape gradient accumulator."""

    __slots__ = ("value", "grad", "requires_grad", "node_id")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return (
            f"DiffArray(shape={self.value.shape}, dtype={self.value.dtype}, "
            f"requires_grad={self.requires_grad}, node_id={self.node_id})"
        )


def constant(value, dtype=None) -> DiffArray:
    """Wrap a value as a non-trainable array."""
    arr = np.asarray(value, dtype=dtype)
    return DiffArray(arr, requires_grad=False)


def parameter(value, dtype=None) -> DiffArray:
    """Wrap a value as a trainable leaf."""
    arr = np.array(value, dtype=dtype)  # own the buffer: leaves get updated in place by optimizers
    return DiffArray(arr, requires_grad=True)


def as_array(x) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return constant(x)


class _TapeEntry:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: DiffArray, inputs: Sequence[DiffArray], backward: Backward):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward = backward


class Graph:
    """Topologically ordered record of operations for one backward pass."""

    def __init__(self):
        self._tape: list[_TapeEntry] = []

    def __enter__(self) -> "Graph":
        _active_graphs.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _active_graphs.pop()
        assert popped is self, "graphs must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self._tape)

    def backward(self, root: DiffArray) -> None:
        """Accumulate gradients of ``root`` into every reachable trainable node.

        ``root`` must be scalar-valued. Entries whose output never received a
        gradient are skipped, so anything cut off by ``stop_gradient`` keeps an
        exactly-zero (absent) gradient.
        """
        if root.value.size != 1:
            raise DimensionError(f"backward root must be scalar, got shape {root.value.shape}")
        accumulate(root, np.ones_like(root.value))
        for entry in reversed(self._tape):
            g = entry.output.grad
            if g is None:
                continue
            entry.backward(g)


def current_graph() -> Optional[Graph]:
    return _active_graphs[-1] if _active_graphs else None


def accumulate(arr: DiffArray, grad: np.ndarray, owned: bool = False) -> None:
    """Add ``grad`` into the accumulator of ``arr``.

    The first write copies unless the caller marks the buffer ``owned``
    (freshly allocated, not aliased anywhere else); later writes add in
    place either way.
    """
    if arr.grad is None:
        if owned and grad.dtype == arr.value.dtype and grad.shape == arr.value.shape:
            arr.grad = grad
        else:
            arr.grad = np.array(grad, dtype=arr.value.dtype)
    else:
        arr.grad += grad


def record_op(value: np.ndarray, inputs: Sequence[DiffArray], backward: Backward) -> DiffArray:
    """Create the output node of an operation and register its backward rule.

    Recording only happens when a graph is active and at least one input is
    trainable; otherwise the result is a plain constant and the backward
    closure is dropped.
    """
    out = DiffArray(value)
    graph = current_graph()
    if graph is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        graph._tape.append(_TapeEntry(out, inputs, backward))
    return out
