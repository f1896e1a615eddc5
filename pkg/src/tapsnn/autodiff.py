"""Reverse-mode autodiff over dense rank-<=2 float64 arrays.

A :class:`Tape` records every differentiable operation in execution order;
``Tape.backward`` replays the records in reverse, which is a valid
topological order by construction. The op set is fixed and small: matmul,
pointwise arithmetic and activations, the surrogate-gradient spike
nonlinearity, concat/slice, reductions and gather. Broadcasting is limited
to python scalars and row-vector bias addition; anything richer raises.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense float64 array of rank <= 2 that can participate in a tape.

    ``requires_grad`` marks trainable leaves; gradients accumulate into
    ``grad`` across backward calls until explicitly cleared.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """Constant copy that blocks gradient flow."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other) -> "Tensor":
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def rows(self, start: int, stop: int) -> "Tensor":
        return rows(self, start, stop)

    def gather(self, indices) -> "Tensor":
        return gather(self, indices)

    def log_softmax(self) -> "Tensor":
        return log_softmax(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations, usable as a context manager.

    While active, any op touching a grad-requiring tensor appends
    ``(out, inputs, vjp)``; ``vjp(g_out)`` returns one gradient per input
    (None for non-differentiable slots).
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

        Repeated calls without clearing leaf grads accumulate. Traversal is
        strict reverse execution order, so a tensor's gradient is complete
        before its producing record consumes it.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, vjp in reversed(self._records):
            if isinstance(out, tuple):  # multi-output op (split_rows)
                g_out = [grads.pop(id(o), None) for o in out]
                for o in out:
                    holders.pop(id(o), None)
                if all(g is None for g in g_out):
                    continue
            else:
                g_out = grads.pop(id(out), None)
                holders.pop(id(out), None)
                if g_out is None:
                    continue  # not reachable from the loss
            for inp, g in zip(inputs, vjp(g_out)):
                if g is None:
                    continue
                k = id(inp)
                acc = grads.get(k)
                # never mutate stored arrays in place; entries may alias g_out
                grads[k] = g if acc is None else acc + g
                holders[k] = inp
        for k, g in grads.items():
            leaf = holders[k]
            if leaf.requires_grad:
                leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


_tape_stack: list[Tape] = []


def _active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


class no_grad:
    """Context that suppresses recording regardless of enclosing tapes."""

    def __enter__(self):
        _tape_stack.append(None)  # type: ignore[arg-type]
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack.pop()


def _wrap(data: np.ndarray) -> Tensor:
    # internal fast path: data is already a well-formed 2-D float64 array
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    return out


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = _wrap(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- primitive operations ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), vjp)


def _check_binary(a: Tensor, b: Tensor, op: str) -> bool:
    """Returns True when b is a (1, n) bias row broadcast over a's rows."""
    if a.shape == b.shape:
        return False
    if b.shape == (1, a.shape[1]) and a.shape[0] > 1:
        return True
    raise ShapeError(f"{op} shapes incompatible: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "add")

    def vjp(g):
        gb = g.sum(axis=0, keepdims=True) if bias else g
        return (g if a.requires_grad else None, gb if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "sub")

    def vjp(g):
        gb = -g.sum(axis=0, keepdims=True) if bias else -g
        return (g if a.requires_grad else None, gb if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either operand may be a (1, 1) scalar tensor."""
    a_scalar, b_scalar = a.data.size == 1, b.data.size == 1
    if a.shape != b.shape and not (a_scalar or b_scalar):
        raise ShapeError(f"mul needs equal shapes or a scalar: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = g * bd
            if a_scalar and ga.size > 1:
                ga = ga.sum().reshape(1, 1)
        if b.requires_grad:
            gb = g * ad
            if b_scalar and gb.size > 1:
                gb = gb.sum().reshape(1, 1)
        return (ga, gb)

    return _make(ad * bd, (a, b), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"minimum needs equal shapes: {a.shape} vs {b.shape}")
    take_a = a.data <= b.data

    def vjp(g):
        return (g * take_a if a.requires_grad else None,
                g * ~take_a if b.requires_grad else None)

    return _make(np.where(take_a, a.data, b.data), (a, b), vjp)


def scale(a: Tensor, k: float) -> Tensor:
    return _make(a.data * k, (a,), lambda g: (g * k,))


def add_scalar(a: Tensor, k: float) -> Tensor:
    return _make(a.data + k, (a,), lambda g: (g,))


def affine(a: Tensor, k: float, m: float) -> Tensor:
    """k * a + m in one record; covers 1 - x and friends."""
    return _make(a.data * k + m, (a,), lambda g: (g * k,))


def axpy(a: Tensor, b: Tensor, k: float) -> Tensor:
    """a + k * b with equal shapes."""
    if a.shape != b.shape:
        raise ShapeError(f"axpy needs equal shapes: {a.shape} vs {b.shape}")

    def vjp(g):
        return (g if a.requires_grad else None,
                g * k if b.requires_grad else None)

    return _make(a.data + k * b.data, (a, b), vjp)


def mix(a: Tensor, b: Tensor, w) -> Tensor:
    """Convex-style combination w * a + (1 - w) * b.

    The weight may be a python float, a (1, 1) scalar tensor, or a tensor of
    the operands' full shape (gate-valued mixing).
    """
    if a.shape != b.shape:
        raise ShapeError(f"mix needs equal operand shapes: {a.shape} vs {b.shape}")
    if not isinstance(w, Tensor):
        k = float(w)
        out_data = k * a.data + (1.0 - k) * b.data

        def vjp(g):
            return (g * k if a.requires_grad else None,
                    g * (1.0 - k) if b.requires_grad else None)

        return _make(out_data, (a, b), vjp)

    w_scalar = w.data.size == 1
    if w.shape != a.shape and not w_scalar:
        raise ShapeError(f"mix weight shape {w.shape} incompatible with {a.shape}")
    wd = w.data
    out_data = wd * a.data + (1.0 - wd) * b.data

    def vjp(g):
        ga = g * wd if a.requires_grad else None
        gb = g * (1.0 - wd) if b.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = g * (a.data - b.data)
            if w_scalar and gw.size > 1:
                gw = gw.sum().reshape(1, 1)
        return (ga, gb, gw)

    return _make(out_data, (a, b, w), vjp)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids overflow without branching on sign
    out = np.tanh(a.data * 0.5)
    out += 1.0
    out *= 0.5
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    ad = a.data

    def vjp(g):
        return (g * (ad > 0),)

    return _make(np.maximum(ad, 0.0), (a,), vjp)


def bias_relu(a: Tensor, b: Tensor) -> Tensor:
    """relu(a + bias row) in one record; the hot path of every dense layer."""
    if b.shape != (1, a.shape[1]):
        raise ShapeError(f"bias_relu needs a (1, n) bias: {a.shape} vs {b.shape}")
    out = np.maximum(a.data + b.data, 0.0)

    def vjp(g):
        gm = g * (out > 0)
        return (gm if a.requires_grad else None,
                gm.sum(axis=0, keepdims=True) if b.requires_grad else None)

    return _make(out, (a, b), vjp)


def bias_sigmoid(a: Tensor, b: Tensor) -> Tensor:
    """sigmoid(a + bias row) in one record."""
    if b.shape != (1, a.shape[1]):
        raise ShapeError(f"bias_sigmoid needs a (1, n) bias: {a.shape} vs {b.shape}")
    out = np.tanh((a.data + b.data) * 0.5)
    out += 1.0
    out *= 0.5

    def vjp(g):
        gm = g * out * (1.0 - out)
        return (gm if a.requires_grad else None,
                gm.sum(axis=0, keepdims=True) if b.requires_grad else None)

    return _make(out, (a, b), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def surrogate_slope(x: np.ndarray | float, alpha: float) -> np.ndarray | float:
    """Arc-tangent surrogate derivative alpha / (2 * (1 + (pi/2 * alpha * x)^2))."""
    z = (math.pi / 2.0) * alpha * x
    return alpha / (2.0 * (1.0 + z * z))


def spike(u: Tensor, threshold: float = 1.0, alpha: float = 2.0) -> Tensor:
    """Heaviside firing on u - threshold; backward uses the arc-tangent surrogate.

    Forward output is exactly 0 or 1 (fires at u == threshold).
    """
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    x = u.data - threshold
    out = (x >= 0.0).astype(np.float64)

    def vjp(g):
        return (g * surrogate_slope(x, alpha),)

    return _make(out, (u,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ShapeError("concat axis must be 0 or 1")
    other = 1 - axis
    sizes = [t.shape[axis] for t in tensors]
    if len({t.shape[other] for t in tensors}) != 1:
        raise ShapeError(f"concat shapes disagree off-axis: {[t.shape for t in tensors]}")
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        if axis == 1:
            return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))
        return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(sizes)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), vjp)


def split_rows(a: Tensor, n_chunks: int) -> list[Tensor]:
    """Split into equal row blocks as one record; backward re-concatenates."""
    total = a.data.shape[0]
    if n_chunks <= 0 or total % n_chunks:
        raise ShapeError(f"cannot split {total} rows into {n_chunks} equal chunks")
    size = total // n_chunks
    outs = tuple(_wrap(a.data[i * size:(i + 1) * size].copy()) for i in range(n_chunks))
    tape = _active_tape()
    if tape is not None and a.requires_grad:
        for o in outs:
            o.requires_grad = True
        shape = a.data.shape

        def vjp(gs):
            full = np.zeros(shape)
            for i, g in enumerate(gs):
                if g is not None:
                    full[i * size:(i + 1) * size] = g
            return (full,)

        tape.record(outs, (a,), vjp)
    return list(outs)


def tsum(a: Tensor) -> Tensor:
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0]),)

    return _make(np.array([[a.data.sum()]]), (a,), vjp)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0] / n),)

    return _make(np.array([[a.data.mean()]]), (a,), vjp)


def gather(a: Tensor, indices) -> Tensor:
    """Select one column per row: out[i, 0] = a[i, indices[i]]."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.shape[0] != a.shape[0]:
        raise ShapeError(f"gather needs one index per row: {idx.shape[0]} vs {a.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError("gather index out of range")
    rows_idx = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[rows_idx, idx] = g[:, 0]
        return (full,)

    return _make(a.data[rows_idx, idx].reshape(-1, 1), (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), vjp)


# -- gradient checking ------------------------------------------------------


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    exclude: Iterable[Tensor] = (),
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must rebuild its value from ``params`` on every call and be
    deterministic. Central differences are invalid through the spike
    nonlinearity (the surrogate is not the true derivative), so tensors
    whose only influence passes through a spike go in ``exclude``.
    Differences below the 1e-8 absolute floor are ignored.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for p in params}
    zero_grads(params)
    excluded = {id(t) for t in exclude}
    worst = 0.0
    for p in params:
        if id(p) in excluded:
            continue
        flat = p.data.reshape(-1)
        ad_flat = analytic[id(p)].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            with no_grad():
                hi = f().item()
            flat[i] = keep - eps
            with no_grad():
                lo = f().item()
            flat[i] = keep
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise ArithmeticError("function returned non-finite value during FD check")
            fd = (hi - lo) / (2.0 * eps)
            diff = abs(fd - ad_flat[i])
            if diff < 1e-8:
                continue
            worst = max(worst, diff / max(abs(fd), abs(ad_flat[i])))
    return worst
