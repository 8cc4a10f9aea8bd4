"""Small reverse-mode differentiation layer over float64 numpy arrays.

Operations executed while a :class:`Tape` is active are recorded together with
their backward rules; :func:`backward` replays them in reverse order.  Outside
a tape every op is a plain numpy computation, which is what evaluation uses.

Complex vectors are stored interleaved along the last axis:
``(re0, im0, re1, im1, ...)``.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ParityError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops run inside the ``with`` block are recorded.
    A tape can be replayed once; call :meth:`reset` before reusing it.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, rule: Callable[[np.ndarray], None]) -> None:
        out.requires_grad = True
        out._backward = rule
        self.nodes.append(out)

    def reset(self) -> None:
        for node in self.nodes:
            node._backward = None
            node.grad = None
        self.nodes = []
        self.consumed = False


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(value: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.requires_grad = False
    out._backward = None
    out.name = None
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, rule)
    return out


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def rule(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def rule(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), rule)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def rule(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def rule(g):
        _accumulate(a, _unbroadcast(g / b.value, a.shape))
        _accumulate(b, _unbroadcast(-g * a.value / b.value**2, b.shape))

    return _make(a.value / b.value, (a, b), rule)


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: _accumulate(a, g * c))


def matmul(a, b) -> Tensor:
    """Matrix-matrix, matrix-vector or vector-matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def rule(g):
        if a.requires_grad:
            if bv.ndim == 1:
                ga = np.outer(g, bv) if av.ndim == 2 else g * bv
            else:
                ga = g @ bv.T
            _accumulate(a, ga)
        if b.requires_grad:
            if av.ndim == 1:
                gb = np.outer(av, g) if bv.ndim == 2 else g * av
            else:
                gb = av.T @ g
            _accumulate(b, gb)

    return _make(av @ bv, (a, b), rule)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T.copy(), (a,), lambda g: _accumulate(a, g.T))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def rule(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            _accumulate(p, piece)

    return _make(value, parts, rule)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def stack(parts: Sequence) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    parts = [as_tensor(p) for p in parts]
    if len({p.shape for p in parts}) > 1:
        raise DimensionError("stack needs equally shaped inputs")

    def rule(g):
        for i, p in enumerate(parts):
            _accumulate(p, g[i])

    return _make(np.stack([p.value for p in parts]), parts, rule)


def take_rows(table, idx) -> Tensor:
    """Gather rows ``table[idx]``; repeated indices accumulate on backward."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def rule(g):
        if table.requires_grad:
            full = np.zeros_like(table.value)
            np.add.at(full, idx, g)
            _accumulate(table, full)

    return _make(table.value[idx], (table,), rule)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        full = np.zeros_like(a.value)
        full[..., start:stop] = g
        _accumulate(a, full)

    return _make(a.value[..., start:stop].copy(), (a,), rule)


def mean_rows(a) -> Tensor:
    """Mean over the leading axis."""
    a = as_tensor(a)
    if a.value.ndim == 0 or a.shape[0] == 0:
        raise DimensionError("mean over an empty or scalar tensor")
    n = a.shape[0]
    return _make(a.value.mean(axis=0), (a,), lambda g: _accumulate(a, np.broadcast_to(g / n, a.shape)))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def rule(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(np.asarray(a.value.sum(axis=axis)), (a,), rule)


# ------------------------------------------------------------------ pointwise


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.value), (a,), lambda g: _accumulate(a, -g * np.sin(a.value)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: _accumulate(a, g * out * (1.0 - out)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: _accumulate(a, g * (1.0 - out**2)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: _accumulate(a, g * mask))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * factor, (a,), lambda g: _accumulate(a, g * factor))


def identity(a) -> Tensor:
    return as_tensor(a)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: _accumulate(a, g / a.value))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input lies inside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: _accumulate(a, g * inside))


def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: keep with probability 1-p and rescale by 1/(1-p).

    Evaluation mode (or p == 0) returns the input untouched.
    """
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.value * mask, (a,), lambda g: _accumulate(a, g * mask))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": tanh,
    "relu": relu,
    "leaky-relu": leaky_relu,
    "identity": identity,
}


# -------------------------------------------------------------------- complex


def _check_even(a: Tensor) -> None:
    if a.value.ndim == 0 or a.shape[-1] % 2:
        raise ParityError(f"complex ops need an even trailing dimension, got {a.shape}")


def complex_mul(a, b) -> Tensor:
    """Elementwise complex product of interleaved arrays (broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_even(a)
    _check_even(b)
    _check_broadcast(a, b)
    ar, ai = a.value[..., 0::2], a.value[..., 1::2]
    br, bi = b.value[..., 0::2], b.value[..., 1::2]
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.empty(shape)
    out[..., 0::2] = ar * br - ai * bi
    out[..., 1::2] = ar * bi + ai * br

    def rule(g):
        gr, gi = g[..., 0::2], g[..., 1::2]
        if a.requires_grad:
            ga = np.empty(shape)
            # d/d conj: multiply by conj(b)
            ga[..., 0::2] = gr * br + gi * bi
            ga[..., 1::2] = -gr * bi + gi * br
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.empty(shape)
            gb[..., 0::2] = gr * ar + gi * ai
            gb[..., 1::2] = -gr * ai + gi * ar
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out, (a, b), rule)


def hermitian_dot(a, b) -> Tensor:
    """Real part of <a, conj(b)> for interleaved complex vectors.

    ``a`` is (d,) or (n, d); ``b`` is (d,) or (m, d); the result has the
    shape of ``a @ b.T``.  Re(sum a_k conj(b_k)) = sum(ar*br + ai*bi), i.e. the
    real dot product of the interleaved storage.
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_even(a)
    _check_even(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"hermitian_dot needs equal lengths, got {a.shape} and {b.shape}")
    return matmul(a, transpose(b) if b.value.ndim == 2 else b)


def complex_inf_norm(a) -> Tensor:
    """Largest modulus among the complex entries of a 1-D interleaved vector."""
    a = as_tensor(a)
    _check_even(a)
    if a.value.ndim != 1:
        raise DimensionError("complex_inf_norm expects a vector")
    re, im = a.value[0::2], a.value[1::2]
    moduli = np.hypot(re, im)
    j = int(np.argmax(moduli))
    m = moduli[j]

    def rule(g):
        full = np.zeros_like(a.value)
        if m > 0:
            full[2 * j] = g * re[j] / m
            full[2 * j + 1] = g * im[j] / m
        _accumulate(a, full)

    return _make(np.asarray(m), (a,), rule)


def l2_norm(a) -> Tensor:
    a = as_tensor(a)
    n = float(np.sqrt(np.sum(a.value**2)))

    def rule(g):
        if n > 0:
            _accumulate(a, g * a.value / n)

    return _make(np.asarray(n), (a,), rule)


# ------------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every recorded input reachable from ``loss``."""
    if loss.size != 1:
        raise BackwardError(f"loss must be a scalar, got shape {loss.shape}")
    if tape.consumed:
        raise BackwardError("tape already replayed; call reset() first")
    tape.consumed = True
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)


def finite_difference_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    epsilon: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` recomputes the scalar loss from the current parameter values.  When
    ``coords`` is given, at most that many coordinates per parameter are
    probed (chosen by ``rng``); otherwise every coordinate is.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = list(params)
    for p in params:
        # own, contiguous storage so the flat view below writes through
        p.value = np.array(p.value, dtype=np.float64)
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("loss is not finite")
    backward(loss, tape)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    tape.reset()

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        positions = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            positions = (rng or np.random.default_rng(0)).choice(flat.size, coords, replace=False)
        for i in positions:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = fn().item()
            flat[i] = orig - epsilon
            down = fn().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("non-finite function value during differencing")
            numeric = (up - down) / (2.0 * epsilon)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
