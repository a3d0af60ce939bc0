"""Minimal tape-based reverse-mode autodiff over n-d float32 arrays.

Tensors wrap a numpy array (float32 by default, float64 for shadow-mode
gradient checking). Differentiable ops record themselves on the thread-local
active Tape in execution order, which is already a topological order, so the
backward pass is a single reverse sweep. Gradients accumulate by summation;
callers zero them between optimizer steps.

Broadcasting is deliberately restricted to bias-add over the last axis.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "add",
    "add_bias",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "softmax",
    "layer_norm",
    "gelu",
    "sum_all",
    "slice_rows",
    "slice_cols",
    "concat_rows",
    "concat_cols",
    "stack_rows",
    "dropout",
    "backward",
    "grad_check",
    "zero_grad",
    "tracing",
    "register",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        arr = arr.astype(dtype, copy=False)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)   # 0-d arrays are already contiguous
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward().

    A tape is confined to one logical thread; independent runs use disjoint
    tapes. Entering the context makes this tape the recording target for ops
    executed on the current thread.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        self._outer = getattr(_LOCAL, "tape", None)
        _LOCAL.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _LOCAL.tape = self._outer

    def __len__(self) -> int:
        return len(self._records)


_LOCAL = threading.local()


def _active() -> Tape | None:
    return getattr(_LOCAL, "tape", None)


def tracing(*tensors: Tensor) -> bool:
    """True when a tape is active and any input participates in gradients."""
    return _active() is not None and any(t.requires_grad for t in tensors)


def register(out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
    """Record a custom op; backward_fn receives d(loss)/d(out)."""
    _active()._records.append((out, backward_fn))


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, requires_grad=tracing(a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._add_grad(g)
            if b.requires_grad:
                b._add_grad(g)
        register(out, bwd)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1-d bias over the last axis (the only broadcast this library does)."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    out = Tensor(x.data + b.data, requires_grad=tracing(x, b))
    if out.requires_grad:
        def bwd(g):
            if x.requires_grad:
                x._add_grad(g)
            if b.requires_grad:
                axes = tuple(range(g.ndim - 1))
                b._add_grad(g.sum(axis=axes) if axes else g)
        register(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, requires_grad=tracing(a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._add_grad(g * b.data)
            if b.requires_grad:
                b._add_grad(g * a.data)
        register(out, bwd)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * s, requires_grad=tracing(x))
    if out.requires_grad:
        register(out, lambda g: x._add_grad(g * s))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product; dA = dC @ B.T, dB = A.T @ dC."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=tracing(a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._add_grad(g @ b.data.T)
            if b.requires_grad:
                b._add_grad(a.data.T @ g)
        register(out, bwd)
    return out


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got {x.shape}")
    out = Tensor(x.data.T, requires_grad=tracing(x))
    if out.requires_grad:
        register(out, lambda g: x._add_grad(g.T))
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=tracing(x))
    if out.requires_grad:
        register(out, lambda g: x._add_grad(g.reshape(x.data.shape)))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Exp-normalize along axis using the max-subtraction stable form."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=tracing(x))
    if out.requires_grad:
        def bwd(g):
            x._add_grad(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        register(out, bwd)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to mean 0 / biased-variance 1, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(gamma.data * xhat + beta.data, requires_grad=tracing(x, gamma, beta))
    if out.requires_grad:
        def bwd(g):
            lead = tuple(range(g.ndim - 1))
            if beta.requires_grad:
                beta._add_grad(g.sum(axis=lead) if lead else g)
            if gamma.requires_grad:
                gamma._add_grad((g * xhat).sum(axis=lead) if lead else g * xhat)
            if x.requires_grad:
                gx = g * gamma.data
                x._add_grad(inv * (gx
                                   - gx.mean(axis=-1, keepdims=True)
                                   - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        register(out, bwd)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Elementwise x * Phi(x), tanh approximation."""
    u = _GELU_C * (x.data + _GELU_K * x.data ** 3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), requires_grad=tracing(x))
    if out.requires_grad:
        def bwd(g):
            du = _GELU_C * (1.0 + 3.0 * _GELU_K * x.data ** 2)
            x._add_grad(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * du))
        register(out, bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), requires_grad=tracing(x))
    if out.requires_grad:
        register(out, lambda g: x._add_grad(np.full_like(x.data, g)))
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[start:stop], requires_grad=tracing(x))
    if out.requires_grad:
        def bwd(g):
            full = np.zeros_like(x.data)
            full[start:stop] = g
            x._add_grad(full)
        register(out, bwd)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols: expected 2-d, got {x.shape}")
    out = Tensor(x.data[:, start:stop], requires_grad=tracing(x))
    if out.requires_grad:
        def bwd(g):
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            x._add_grad(full)
        register(out, bwd)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    widths = {p.shape[1] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(widths) != 1:
        raise ShapeError(f"concat_rows: need 2-d parts of equal width, got {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0),
                 requires_grad=tracing(*parts))
    if out.requires_grad:
        def bwd(g):
            off = 0
            for p in parts:
                n = p.shape[0]
                if p.requires_grad:
                    p._add_grad(g[off:off + n])
                off += n
        register(out, bwd)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    heights = {p.shape[0] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(heights) != 1:
        raise ShapeError(f"concat_cols: need 2-d parts of equal height, got {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1),
                 requires_grad=tracing(*parts))
    if out.requires_grad:
        def bwd(g):
            off = 0
            for p in parts:
                w = p.shape[1]
                if p.requires_grad:
                    p._add_grad(g[:, off:off + w])
                off += w
        register(out, bwd)
    return out


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length into a 2-d matrix, one per row."""
    if any(p.data.ndim != 1 for p in parts) or len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"stack_rows: need 1-d parts of equal length, got {[p.shape for p in parts]}")
    out = Tensor(np.stack([p.data for p in parts], axis=0),
                 requires_grad=tracing(*parts))
    if out.requires_grad:
        def bwd(g):
            for i, p in enumerate(parts):
                if p.requires_grad:
                    p._add_grad(g[i])
        register(out, bwd)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; rate 0 is the identity (same tensor, nothing recorded)."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError(f"dropout: rate must be < 1, got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep, requires_grad=tracing(x))
    if out.requires_grad:
        register(out, lambda g: x._add_grad(g * keep))
    return out


# ---------------------------------------------------------------------------
# backward pass and checking


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad for every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._records):
        if out.grad is not None:
            fn(out.grad)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    Runs everything in float64 so finite-difference noise stays below the
    1e-3 tolerance the op contracts promise. The numeric side re-evaluates f
    at perturbed inputs without a tape, fully independent of the backward
    rules it checks.
    """
    xs = Tensor(x.data.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(xs)
    backward(y, tape)
    analytic = np.zeros_like(xs.data) if xs.grad is None else xs.grad

    numeric = np.zeros_like(xs.data)
    flat = xs.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(xs.data.copy())).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(xs.data.copy())).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())
