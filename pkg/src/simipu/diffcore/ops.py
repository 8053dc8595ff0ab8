"""Differentiable primitives used by the encoders, sampling heads, and losses.

Each primitive computes its forward value with numpy and registers a
backward closure on the active graph. Broadcasting in the elementwise
primitives follows numpy rules; gradients are summed back down to each
input's shape.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError
from .graph import DiffArray, accumulate, as_array, record_op

# Debug hook for the backward-mutation check: when nonzero, relu's backward
# rule is deliberately scaled by (1 + _BACKWARD_FAULT) so gradient checks fail.
_BACKWARD_FAULT = 0.0


def set_backward_fault(scale: float) -> None:
    global _BACKWARD_FAULT
    _BACKWARD_FAULT = float(scale)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    value = a.value + b.value

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.value.shape)
            accumulate(a, ga, owned=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.value.shape)
            accumulate(b, gb, owned=gb is not g)

    return record_op(value, (a, b), backward)


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    value = a.value - b.value

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.value.shape)
            accumulate(a, ga, owned=ga is not g)
        if b.requires_grad:
            accumulate(b, _unbroadcast(-g, b.value.shape), owned=True)

    return record_op(value, (a, b), backward)


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    value = a.value * b.value

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.value, a.value.shape), owned=True)
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.value, b.value.shape), owned=True)

    return record_op(value, (a, b), backward)


def neg(a) -> DiffArray:
    a = as_array(a)

    def backward(g):
        if a.requires_grad:
            accumulate(a, -g, owned=True)

    return record_op(-a.value, (a,), backward)


def matmul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul needs (m,k)x(k,n); got {a.value.shape} and {b.value.shape}"
        )
    value = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            accumulate(a, g @ b.value.T, owned=True)
        if b.requires_grad:
            accumulate(b, a.value.T @ g, owned=True)

    return record_op(value, (a, b), backward)


def transpose(a) -> DiffArray:
    a = as_array(a)
    if a.value.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.value.shape}")

    def backward(g):
        if a.requires_grad:
            accumulate(a, g.T)

    return record_op(a.value.T.copy(), (a,), backward)


def relu(a) -> DiffArray:
    a = as_array(a)
    mask = a.value > 0

    def backward(g):
        if a.requires_grad:
            scaled = g if _BACKWARD_FAULT == 0.0 else g * (1.0 + _BACKWARD_FAULT)
            accumulate(a, np.where(mask, scaled, 0.0), owned=True)

    return record_op(np.where(mask, a.value, 0.0), (a,), backward)


def exp(a) -> DiffArray:
    a = as_array(a)
    value = np.exp(a.value)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g * value, owned=True)

    return record_op(value, (a,), backward)


def log(a) -> DiffArray:
    a = as_array(a)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g / a.value, owned=True)

    return record_op(np.log(a.value), (a,), backward)


def sqrt(a) -> DiffArray:
    a = as_array(a)
    value = np.sqrt(a.value)

    def backward(g):
        if a.requires_grad:
            with np.errstate(divide="ignore"):
                accumulate(a, g * (0.5 / value), owned=True)

    return record_op(value, (a,), backward)


def array_sum(a, axis: Optional[int] = None, keepdims: bool = False) -> DiffArray:
    a = as_array(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.value.shape).copy(), owned=True)
        else:
            gk = g if keepdims else np.expand_dims(g, axis)
            accumulate(a, np.broadcast_to(gk, a.value.shape).copy(), owned=True)

    return record_op(value, (a,), backward)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> DiffArray:
    a = as_array(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(array_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reduce_max(a, axis: int, keepdims: bool = False) -> DiffArray:
    """Maximum along one axis; the gradient routes to the first argmax."""
    a = as_array(a)
    idx = np.argmax(a.value, axis=axis)
    value = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis)
    out_value = value if keepdims else np.squeeze(value, axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        gk = g if keepdims else np.expand_dims(g, axis)
        slot = np.zeros_like(a.value)
        np.put_along_axis(slot, np.expand_dims(idx, axis), gk, axis=axis)
        accumulate(a, slot, owned=True)

    return record_op(out_value, (a,), backward)


def take_rows(a, indices) -> DiffArray:
    """Gather rows along the first axis; the gradient scatter-adds back."""
    a = as_array(a)
    idx = np.asarray(indices, dtype=np.intp)
    value = a.value[idx]

    def backward(g):
        if a.requires_grad:
            slot = np.zeros_like(a.value)
            np.add.at(slot, idx, g)
            accumulate(a, slot, owned=True)

    return record_op(value, (a,), backward)


def concat(parts: Sequence, axis: int = 0) -> DiffArray:
    arrays = [as_array(p) for p in parts]
    value = np.concatenate([p.value for p in arrays], axis=axis)
    sizes = [p.value.shape[axis] for p in arrays]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, lo, hi in zip(arrays, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                accumulate(part, g[tuple(sl)])

    return record_op(value, tuple(arrays), backward)


def reshape(a, shape) -> DiffArray:
    a = as_array(a)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g.reshape(a.value.shape))

    return record_op(a.value.reshape(shape), (a,), backward)


def l2_normalize(a, epsilon: float = 1e-12) -> DiffArray:
    """Divide each trailing-axis vector by max(its L2 norm, epsilon)."""
    if epsilon <= 0:
        raise ConfigError(f"l2_normalize epsilon must be > 0, got {epsilon}")
    a = as_array(a)
    norms = np.linalg.norm(a.value, axis=-1, keepdims=True)
    denom = np.maximum(norms, epsilon)
    value = a.value / denom

    def backward(g):
        if not a.requires_grad:
            return
        dot = np.sum(g * value, axis=-1, keepdims=True)
        free = norms > epsilon  # below epsilon the map is linear: x / epsilon
        da = g / denom - np.where(free, value * dot / denom, 0.0)
        accumulate(a, da, owned=True)

    return record_op(value, (a,), backward)


def stop_gradient(a) -> DiffArray:
    """Identity in value; contributes exactly zero gradient upstream."""
    a = as_array(a)
    return DiffArray(a.value, requires_grad=False)


def avg_pool2d(x, size: int = 2) -> DiffArray:
    """Non-overlapping mean pooling over (C, H, W); H and W must divide by size."""
    x = as_array(x)
    if x.value.ndim != 3:
        raise DimensionError(f"avg_pool2d expects (C, H, W), got {x.value.shape}")
    c, h, w = x.value.shape
    if size < 1 or h % size or w % size:
        raise ConfigError(f"pool size {size} does not divide input {h}x{w}")
    value = x.value.reshape(c, h // size, size, w // size, size).mean(axis=(2, 4))

    def backward(g):
        if x.requires_grad:
            spread = np.broadcast_to(
                g[:, :, None, :, None] / (size * size), (c, h // size, size, w // size, size)
            )
            accumulate(x, spread.reshape(c, h, w).copy(), owned=True)

    return record_op(value, (x,), backward)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> DiffArray:
    """2-D cross-correlation of a (C_in,H,W) map with a (C_out,C_in,k,k) kernel.

    Implemented as im2col plus one matrix product so the heavy lifting stays
    in BLAS; the backward pass reuses the column matrix for the kernel
    gradient and scatters the input gradient with k*k strided adds.
    """
    x, kernel = as_array(x), as_array(kernel)
    if x.value.ndim != 3 or kernel.value.ndim != 4:
        raise DimensionError(
            f"conv2d expects (C,H,W) input and (O,C,k,k) kernel; got {x.value.shape} and {kernel.value.shape}"
        )
    c_in, h, w = x.value.shape
    c_out, c_k, kh, kw = kernel.value.shape
    if c_k != c_in:
        raise DimensionError(f"kernel expects {c_k} input channels, input has {c_in}")
    if kh != kw or kh % 2 == 0:
        raise ConfigError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if stride < 1:
        raise ConfigError(f"conv2d stride must be >= 1, got {stride}")
    k = kh
    if (h + 2 * padding - k) % stride or (w + 2 * padding - k) % stride:
        raise ConfigError(
            f"conv2d output size not integral for input {h}x{w}, kernel {k}, "
            f"stride {stride}, padding {padding}"
        )
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1

    padded = np.pad(x.value, ((0, 0), (padding, padding), (padding, padding))) if padding else x.value
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(c_in * k * k, h_out * w_out)
    wmat = kernel.value.reshape(c_out, c_in * k * k)
    value = (wmat @ cols).reshape(c_out, h_out, w_out)

    def backward(g):
        gmat = g.reshape(c_out, h_out * w_out)
        if kernel.requires_grad:
            accumulate(kernel, (gmat @ cols.T).reshape(kernel.value.shape), owned=True)
        if x.requires_grad:
            dwin = (wmat.T @ gmat).reshape(c_in, k, k, h_out, w_out)
            dpad = np.zeros_like(padded)
            for ki in range(k):
                for kj in range(k):
                    dpad[:, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride] += dwin[:, ki, kj]
            if padding:
                accumulate(x, np.ascontiguousarray(dpad[:, padding : padding + h, padding : padding + w]), owned=True)
            else:
                accumulate(x, dpad, owned=True)

    return record_op(value, (x, kernel), backward)
