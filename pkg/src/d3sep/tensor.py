"""Dense double-precision tensors with reverse-mode automatic differentiation.

Gradients are accumulated by walking the recorded operation graph in reverse
topological order.  The graph is rebuilt on every forward pass (define-by-run),
so arbitrary control flow in model code just works.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class ShapeMismatchError(ValueError):
    pass


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """N-dimensional float64 array with an optional gradient slot.

    ``_parents`` and ``_backward`` form the tape record for the operation that
    produced this tensor; leaves have an empty parent tuple.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward: Callable | None = None,
                 name: str | None = None):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: Array):
        if g.shape != self.data.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self):
        """Populate ``grad`` on every reachable ``requires_grad`` leaf.

        The loss must be scalar (exactly one element).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Unreachable leaves keep grad=None; callers treat that as zero.

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _coerce_pair(a: Tensor, b) -> tuple[Tensor, Array | float, bool]:
    """Return (a, b_value, b_is_tensor); enforce equal shapes unless b is scalar."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeMismatchError(f"operand shapes differ: {a.shape} vs {b.shape}")
        return a, b, True
    return a, float(b), False


def add(a: Tensor, b) -> Tensor:
    a, bv, b_is_t = _coerce_pair(a, b)
    if b_is_t:
        out = Tensor(a.data + bv.data, _parents=(a, bv))

        def bwd(g):
            a._accumulate(g)
            bv._accumulate(g)
    else:
        out = Tensor(a.data + bv, _parents=(a,))

        def bwd(g):
            a._accumulate(g)
    out._backward = bwd if out.requires_grad else None
    return out


def sub(a: Tensor, b) -> Tensor:
    a, bv, b_is_t = _coerce_pair(a, b)
    if b_is_t:
        out = Tensor(a.data - bv.data, _parents=(a, bv))

        def bwd(g):
            a._accumulate(g)
            bv._accumulate(-g)
    else:
        out = Tensor(a.data - bv, _parents=(a,))

        def bwd(g):
            a._accumulate(g)
    out._backward = bwd if out.requires_grad else None
    return out


def mul(a: Tensor, b) -> Tensor:
    a, bv, b_is_t = _coerce_pair(a, b)
    if b_is_t:
        out = Tensor(a.data * bv.data, _parents=(a, bv))

        def bwd(g):
            a._accumulate(g * bv.data)
            bv._accumulate(g * a.data)
    else:
        out = Tensor(a.data * bv, _parents=(a,))

        def bwd(g):
            a._accumulate(g * bv)
    out._backward = bwd if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    """max-with-0 nonlinearity."""
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), _parents=(a,))

    def bwd(g):
        a._accumulate(g * mask)

    out._backward = bwd if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, _parents=(a,))

    def bwd(g):
        a._accumulate(g * s * (1.0 - s))

    out._backward = bwd if out.requires_grad else None
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), _parents=(a,))

    def bwd(g):
        a._accumulate(np.full_like(a.data, float(g)))

    out._backward = bwd if out.requires_grad else None
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean(), _parents=(a,))

    def bwd(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    out._backward = bwd if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def bwd(g):
        a._accumulate(g.reshape(a.data.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def elementwise(op_kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name; ``b`` may be a same-shape tensor or a scalar."""
    if op_kind == "add":
        return add(a, b)
    if op_kind == "sub":
        return sub(a, b)
    if op_kind == "mul":
        return mul(a, b)
    if op_kind == "max-with-0":
        return relu(a)
    raise ValueError(f"unknown op_kind {op_kind!r}")


def finite_diff_check(fn: Callable[[Tensor], Tensor], x: Tensor,
                      step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = fn(probe)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("fn produced a non-finite value")
    loss.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    flat = x.data.reshape(-1).copy()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig - step
        fm = fn(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * step)
    an = analytic.reshape(-1)
    denom = np.maximum(1.0, np.abs(an))
    return float(np.max(np.abs(an - numeric) / denom))


def concat_tensors(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Differentiable concatenation along ``axis``."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat of zero tensors")
    if len(parts) == 1:
        p = parts[0]
        out = Tensor(p.data, _parents=(p,))

        def bwd1(g):
            p._accumulate(g)

        out._backward = bwd1 if out.requires_grad else None
        return out
    ref = list(parts[0].shape)
    for p in parts[1:]:
        s = list(p.shape)
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeMismatchError(
                f"concat extents differ off-axis: {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[axis] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))

    def bwd(g):
        start = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            p._accumulate(np.ascontiguousarray(g[tuple(sl)]))
            start += size

    out._backward = bwd if out.requires_grad else None
    return out


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Differentiable contiguous slice along one axis."""
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(a.data[sl]), _parents=(a,))

    def bwd(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        a._accumulate(full)

    out._backward = bwd if out.requires_grad else None
    return out


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Differentiable zero padding along one axis."""
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    out = Tensor(np.pad(a.data, widths), _parents=(a,))

    def bwd(g):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(before, before + a.data.shape[axis])
        a._accumulate(np.ascontiguousarray(g[tuple(sl)]))

    out._backward = bwd if out.requires_grad else None
    return out
