"""Dense tensors with reverse-mode automatic differentiation.

Every quantity in the model is a `Tensor`: a row-major numpy array plus
an optional gradient buffer. Differentiable operations record an entry
on a thread-local `Tape` (a Wengert list); `backward(loss)` walks that
list once in reverse, accumulating gradients into every reachable
tensor with `requires_grad=True`.

Precision is a global run mode, not a per-tensor property: 32-bit for
training, 64-bit for verification suites (finite-difference gradient
checks are unreliable at 32-bit). Switch with `set_precision()` or the
`precision()` context manager.

Gradient buffers accumulate across backward calls and persist until
explicitly cleared (the optimizer clears them after each step); this is
what lets sharpness-aware training run two backward passes per update
with an intervening clear.
"""

import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, LabelError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

_MODE = {"dtype": np.float32}


def set_precision(bits: int) -> None:
    """Set the global floating-point mode: 32 (training) or 64 (verification)."""
    if bits == 32:
        _MODE["dtype"] = np.float32
    elif bits == 64:
        _MODE["dtype"] = np.float64
    else:
        raise ContractError(f"precision must be 32 or 64, got {bits}")


def get_dtype() -> np.dtype:
    return _MODE["dtype"]


@contextmanager
def precision(bits: int):
    """Temporarily switch the global precision mode."""
    old = _MODE["dtype"]
    set_precision(bits)
    try:
        yield
    finally:
        _MODE["dtype"] = old


class Tensor:
    """Dense n-dimensional real array, optionally tracked by the tape.

    Data is immutable by convention after construction; the two
    sanctioned exceptions are the grad buffer and in-place parameter
    updates performed by the optimizer (which never run under the tape).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=get_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _wrap(data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar --------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=get_dtype()))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise ContractError("tensor/tensor division is not part of the op set")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_op(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return msum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mmean(self, axis, keepdims)

    def roll(self, shift, axes):
        return cyclic_roll(self, shift, axes)


# -- tape ----------------------------------------------------------------------


class TapeEntry:
    """One executed operation: inputs, output, and its backward rule."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations (a Wengert list).

    Operations are appended in execution order, so every entry's inputs
    precede it; the reverse walk in `backward` therefore visits each
    node exactly once. Tapes are thread-confined.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []


_tls = threading.local()


def _state():
    if not hasattr(_tls, "tape"):
        _tls.tape = Tape()
        _tls.grad_enabled = True
    return _tls


def active_tape() -> Tape:
    return _state().tape


@contextmanager
def no_grad():
    """Run without recording tape entries (evaluation, perturbation steps)."""
    st = _state()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


def _make(inputs: tuple, data: np.ndarray, backward_fn) -> Tensor:
    st = _state()
    needs = st.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs)
    if needs:
        st.tape.entries.append(TapeEntry(inputs, out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from `loss`.

    Accumulates (+=) into existing grad buffers; fan-out therefore sums
    naturally, and parameter grads from a previous backward survive
    until cleared. The consumed tape is released afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    loss.grad = np.ones_like(loss.data)
    for entry in reversed(tape.entries):
        out_grad = entry.output.grad
        if out_grad is None:
            continue
        grads = entry.backward_fn(out_grad)
        for inp, g in zip(entry.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad += g
    tape.entries.clear()


def clear_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# -- broadcasting helper ---------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- arithmetic primitives --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(og):
        ga = _unbroadcast(og, a.shape) if a.requires_grad else None
        gb = _unbroadcast(og, b.shape) if b.requires_grad else None
        return ga, gb

    return _make((a, b), data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(og):
        ga = _unbroadcast(og, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-og, b.shape) if b.requires_grad else None
        return ga, gb

    return _make((a, b), data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(og):
        ga = _unbroadcast(og * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(og * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make((a, b), data, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    return _make((x,), x.data * c, lambda og: (og * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; batch dims broadcast, inner dims must agree."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs at least 2-d operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(
            f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}"
        ) from exc

    def bwd(og):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(og, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), og), b.shape)
        return ga, gb

    return _make((a, b), data, bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W + b over the trailing axis; accepts 1-d x."""
    if weight.ndim != 2:
        raise DimensionError(f"linear weight must be 2-d, got {weight.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear input dim {x.shape} does not match weight {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear bias {bias.shape} does not match weight {weight.shape}"
        )
    if x.ndim == 1:
        y = matmul(reshape(x, (1, x.shape[0])), weight)
        return reshape(add(y, bias), (weight.shape[1],))
    return add(matmul(x, weight), bias)


# -- activations -------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    return _make((x,), data, lambda og: (og * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                    np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def bwd(og):
        return (og * data * (1.0 - data),)

    return _make((x,), data, bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x) (not the tanh approximation)."""
    d = x.data
    phi_cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    data = d * phi_cdf

    def bwd(og):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
        return (og * (phi_cdf + d * pdf),)

    return _make((x,), data, bwd)


# -- normalization and losses --------------------------------------------------------


def softmax(x: Tensor, axis: int) -> Tensor:
    """Exp-normalize along `axis` with max-subtraction for stability."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(og):
        inner = (og * y).sum(axis=axis, keepdims=True)
        return (y * (og - inner),)

    return _make((x,), y, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each token over the trailing channel axis, then affine."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match "
            f"channel dim {c}"
        )
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bwd(og):
        gx = gg = gb = None
        if gain.requires_grad:
            gg = (og * xhat).reshape(-1, c).sum(axis=0)
        if bias.requires_grad:
            gb = og.reshape(-1, c).sum(axis=0)
        if x.requires_grad:
            dxhat = og * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return gx, gg, gb

    return _make((x, gain, bias), data, bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [batch, classes], got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if t.shape[0] != n:
        raise DimensionError(f"{t.shape[0]} targets for {n} logit rows")
    bad = np.nonzero((t < 0) | (t >= k))[0]
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"target {int(t[i])} at index {i} outside [0, {k})")
    m = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - m)
    lse = np.log(e.sum(axis=1)) + m[:, 0]
    losses = lse - logits.data[np.arange(n), t]
    data = np.asarray(losses.mean(), dtype=logits.data.dtype)

    def bwd(og):
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), t] -= 1.0
        return (p * (og / n),)

    return _make((logits,), data, bwd)


# -- structural ops ----------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    data = np.ascontiguousarray(x.data.reshape(shape))
    return _make((x,), data, lambda og: (og.reshape(x.shape),))


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for shape {x.shape}")
    inverse = np.argsort(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))
    return _make((x,), data, lambda og: (og.transpose(inverse),))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat of zero tensors")
    nd = tensors[0].ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"concat axis {axis} invalid for ndim {nd}")
    axis = axis % nd
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(og):
        pieces = np.split(og, splits, axis=axis)
        return tuple(
            p if t.requires_grad else None for t, p in zip(tensors, pieces)
        )

    return _make(tuple(tensors), data, bwd)


def slice_op(x: Tensor, key) -> Tensor:
    """Basic indexing (ints and slices); backward scatters into zeros."""
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, (int, slice)):
            raise DimensionError(f"slice supports ints and slices, got {type(k).__name__}")
    try:
        data = np.ascontiguousarray(x.data[key])
    except IndexError as exc:
        raise DimensionError(f"slice {key} invalid for shape {x.shape}") from exc

    def bwd(og):
        buf = np.zeros_like(x.data)
        buf[key] = og
        return (buf,)

    return _make((x,), data, bwd)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a 2-d table; backward scatter-adds (shared rows sum)."""
    if x.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-d table, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"take_rows index out of range for {x.shape[0]} rows")
    data = x.data[idx]

    def bwd(og):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx.reshape(-1), og.reshape(-1, x.shape[1]))
        return (buf,)

    return _make((x,), data, bwd)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(a % ndim for a in axis)
    if len(set(axis)) != len(axis):
        raise DimensionError(f"duplicate reduction axes {axis}")
    return axis


def msum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def bwd(og):
        g = og
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make((x,), data, bwd)


def mmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    if axis is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[a] for a in axis]))
    data = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def bwd(og):
        g = og
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _make((x,), data, bwd)


def cyclic_roll(x: Tensor, shift, axes) -> Tensor:
    """np.roll semantics; the backward rule is a roll by -shift."""
    shift = tuple(shift) if isinstance(shift, (tuple, list)) else (shift,)
    axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
    if len(shift) != len(axes):
        raise DimensionError(f"roll shift {shift} and axes {axes} differ in length")
    for a in axes:
        if not -x.ndim <= a < x.ndim:
            raise DimensionError(f"roll axis {a} invalid for shape {x.shape}")
    data = np.roll(x.data, shift, axis=axes)
    neg = tuple(-s for s in shift)
    return _make((x,), data, lambda og: (np.roll(og, neg, axis=axes),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ContractError(f"dropout rate must be < 1, got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _make((x,), x.data * keep, lambda og: (og * keep,))


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shape tensors along a new axis (concat of reshapes)."""
    if not tensors:
        raise DimensionError("stack of zero tensors")
    base = tensors[0].shape
    expanded = []
    for t in tensors:
        if t.shape != base:
            raise DimensionError(f"stack shape mismatch: {t.shape} vs {base}")
        new_shape = base[:axis] + (1,) + base[axis:]
        expanded.append(reshape(t, new_shape))
    return concat(expanded, axis)
