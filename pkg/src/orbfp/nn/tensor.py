"""A small reverse-mode differentiation engine on numpy arrays.

Layouts are channels-last: sequences are ``(N, L, C)``. Every op records a
closure that maps the output gradient to input gradients; :meth:`Tensor.backward`
replays them in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericalError, ParameterError

DEBUG_FINITE = False
_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ParameterError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite values in forward pass")
    out = Tensor(data, requires_grad=_GRAD_ENABLED and any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --- elementwise and shape ops ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ParameterError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``rate == 0``."""
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep.astype(x.data.dtype) / (1.0 - rate)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum_axis0(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(x.data.sum(axis=0), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-row gather along axis 1: ``out[n, i] = x[n, index[n, i]]``."""
    index = np.asarray(index)

    def back(g):
        n, length = x.shape[0], x.shape[1]
        flat = (index + (np.arange(n) * length)[:, None]).ravel()
        # repeated indices accumulate
        gx = np.bincount(flat, weights=g.reshape(-1), minlength=n * length)
        return (gx.reshape(x.shape).astype(x.data.dtype, copy=False),)

    return _result(np.take_along_axis(x.data, index, axis=1), (x,), back)


def linear_map(x: Tensor, matrix: np.ndarray) -> Tensor:
    """Fixed linear operator on the last axis: ``x @ matrix.T``; no parameters."""
    mt = matrix.T
    return _result(x.data @ mt, (x,), lambda g: (g @ matrix,))


# --- layers ----------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x (N, in) @ w (in, out) + b``."""
    xd = x.data

    def back(g):
        return g @ w.data.T, xd.T @ g, g.sum(axis=0)

    return _result(xd @ w.data + b.data, (x, w, b), back)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """'Same' zero-padded 1-D convolution (cross-correlation).

    ``x`` is ``(N, L, Cin)``, ``w`` is ``(Cin, K, Cout)`` with odd ``K``,
    ``b`` is ``(Cout,)``. Single-channel inputs use im2col and one matrix
    product; wider inputs accumulate one matrix product per tap, which avoids
    materialising the column matrix.
    """
    n, length, cin = x.shape
    cin_w, k, cout = w.shape
    if cin != cin_w:
        raise ParameterError(f"conv1d expects {cin_w} input channels, got {cin}")
    if k % 2 == 0:
        raise ParameterError("conv1d kernel size must be odd")
    half = k // 2
    xp = np.pad(x.data, ((0, 0), (half, half), (0, 0)))
    wd = w.data
    if cin == 1:
        cols = sliding_window_view(xp[:, :, 0], k, axis=1).reshape(n * length, k)
        out = (cols @ wd[0] + b.data).reshape(n, length, cout)
    else:
        cols = None
        out = np.broadcast_to(b.data, (n, length, cout)).copy()
        for j in range(k):
            out += xp[:, j : j + length, :] @ wd[:, j, :]

    def back(g):
        gb = g.sum(axis=(0, 1))
        if cols is not None:
            gw = (cols.T @ g.reshape(n * length, cout))[None]
        else:
            gw = np.stack(
                [np.tensordot(xp[:, j : j + length, :], g, axes=([0, 1], [0, 1])) for j in range(k)], axis=1
            )
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + length, :] += g @ wd[:, j, :].T
            gx = gxp[:, half : half + length, :]
        return gx, gw, gb

    return _result(out, (x, w, b), back)


def maxpool1d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling over axis 1; the length must divide evenly."""
    if size == 1:
        return x
    n, length, c = x.shape
    if length % size:
        raise ParameterError(f"pool size {size} does not divide length {length}")
    lp = length // size
    blocks = x.data.reshape(n, lp, size, c)
    out = blocks[:, :, 0, :]
    arg = np.zeros(out.shape, dtype=np.int8)
    for j in range(1, size):
        bj = blocks[:, :, j, :]
        better = bj > out  # strict, so ties route to the first maximum
        out = np.where(better, bj, out)
        arg = np.where(better, np.int8(j), arg)

    def back(g):
        rows = np.arange(n * lp, dtype=np.intp)[:, None] * size + arg.reshape(n * lp, c)
        flat = rows * c + np.arange(c)
        gx = np.zeros(n * length * c, dtype=g.dtype)
        gx[flat.reshape(-1)] = g.reshape(-1)
        return (gx.reshape(n, length, c),)

    return _result(out, (x,), back)
