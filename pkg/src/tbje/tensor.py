"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` is a Wengert list: every primitive executed while a tape is
active appends a record holding the output, the inputs, and a closure that
propagates the output gradient to the inputs. ``Tape.backward`` walks the
records in exact reverse execution order, so no graph search is needed.

Everything is float64. Gradients accumulate into ``Tensor.grad`` (a numpy
array of the same shape as ``Tensor.data``).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor", "Tape", "backward", "add", "sub", "mul", "scale", "matmul",
    "transpose", "concat", "slice_last", "tsum", "tmean", "softmax",
    "log_softmax", "log", "sigmoid", "log_sigmoid", "relu", "layer_norm",
    "dropout", "masked_fill",
]

_active_tape = None


class Tape:
    """Ordered record of executed primitives for one forward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the scalar loss. A tape can be replayed backward
    once; a second call without a fresh forward raises ``ContractError``.
    """

    def __init__(self):
        self._records = []
        self._consumed = False
        self._prev = None

    def __enter__(self):
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = self._prev
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out, inputs, vjp):
        self._records.append((out, inputs, vjp))

    def backward(self, loss: "Tensor") -> None:
        """Propagate d(loss)/d(x) into ``x.grad`` for every recorded ancestor."""
        if self._consumed:
            raise ContractError(
                "tape already replayed; run a fresh forward pass before "
                "calling backward() again")
        if loss.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, _inputs, vjp in reversed(self._records):
            if out.grad is not None:
                vjp(out.grad)
        self._consumed = True

    def clear(self):
        """Drop all records (and with them the intermediate buffers)."""
        self._records.clear()
        self._consumed = False


def backward(loss: "Tensor") -> None:
    """Replay the currently active tape backward from ``loss``."""
    if _active_tape is None:
        raise ContractError("backward() called with no active tape")
    _active_tape.backward(loss)


class Tensor:
    """A dense float64 array, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        # contiguity matters: gradcheck and serialization treat .data as a
        # flat buffer, which a strided view would silently break
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operators resolve the module-level functions at call time, so the
    # primitives stay patchable for negative-control tests.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, inputs, make_vjp):
    """Build the op output and, when grads are wanted, record its vjp."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad and _active_tape is not None:
        _active_tape.record(out, inputs, make_vjp())
    return out


def _accumulate(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def make_vjp():
        def vjp(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g, b.data.shape))
        return vjp

    return _from_op(data, (a, b), make_vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def make_vjp():
        def vjp(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-g, b.data.shape))
        return vjp

    return _from_op(data, (a, b), make_vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def make_vjp():
        ad, bd = a.data, b.data

        def vjp(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g * bd, ad.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g * ad, bd.shape))
        return vjp

    return _from_op(data, (a, b), make_vjp)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    data = a.data * c

    def make_vjp():
        def vjp(g):
            _accumulate(a, g * c)
        return vjp

    return _from_op(data, (a,), make_vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading (batch) axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} vs {b.data.shape}")
    data = a.data @ b.data

    def make_vjp():
        ad, bd = a.data, b.data

        def vjp(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))
        return vjp

    return _from_op(data, (a, b), make_vjp)


def transpose(a: Tensor, axis0: int = -2, axis1: int = -1) -> Tensor:
    data = np.swapaxes(a.data, axis0, axis1)

    def make_vjp():
        def vjp(g):
            _accumulate(a, np.swapaxes(g, axis0, axis1))
        return vjp

    return _from_op(data, (a,), make_vjp)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)

    def make_vjp():
        sizes = [p.data.shape[axis] for p in parts]

        def vjp(g):
            offsets = np.cumsum([0] + sizes)
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    index = [slice(None)] * g.ndim
                    index[axis] = slice(lo, hi)
                    _accumulate(p, g[tuple(index)])
        return vjp

    return _from_op(data, tuple(parts), make_vjp)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[start:stop]`` along the last axis."""
    data = a.data[..., start:stop]

    def make_vjp():
        def vjp(g):
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            _accumulate(a, full)
        return vjp

    return _from_op(data, (a,), make_vjp)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def make_vjp():
        def vjp(g):
            _accumulate(a, g.reshape(a.data.shape))
        return vjp

    return _from_op(data, (a,), make_vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def make_vjp():
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        return vjp

    return _from_op(data, (a,), make_vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / data.size

    def make_vjp():
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape) / count)
        return vjp

    return _from_op(data, (a,), make_vjp)


def _check_softmax_input(x, axis):
    if np.isnan(x).any() or np.isposinf(x).any():
        raise NumericError("softmax input contains NaN or +inf")
    if np.isneginf(np.max(x, axis=axis)).any():
        raise NumericError("softmax over a fully -inf slice is undefined")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``. -inf entries get exactly zero weight."""
    _check_softmax_input(a.data, axis)
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - shift)
    data = e / e.sum(axis=axis, keepdims=True)

    def make_vjp():
        y = data

        def vjp(g):
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, (g - inner) * y)
        return vjp

    return _from_op(data, (a,), make_vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_softmax_input(a.data, axis)
    shift = np.max(a.data, axis=axis, keepdims=True)
    centered = a.data - shift
    lse = np.log(np.exp(centered).sum(axis=axis, keepdims=True))
    data = centered - lse

    def make_vjp():
        probs = np.exp(data)

        def vjp(g):
            _accumulate(a, g - probs * g.sum(axis=axis, keepdims=True))
        return vjp

    return _from_op(data, (a,), make_vjp)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def make_vjp():
        def vjp(g):
            _accumulate(a, g / a.data)
        return vjp

    return _from_op(data, (a,), make_vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def make_vjp():
        y = data

        def vjp(g):
            _accumulate(a, g * y * (1.0 - y))
        return vjp

    return _from_op(data, (a,), make_vjp)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    x = a.data
    data = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))),
                    x - np.log1p(np.exp(-np.abs(x))))

    def make_vjp():
        def vjp(g):
            # d/dx log(sigmoid(x)) = sigmoid(-x)
            xx = a.data
            s = np.where(xx >= 0, np.exp(-np.abs(xx)) / (1.0 + np.exp(-np.abs(xx))),
                         1.0 / (1.0 + np.exp(-np.abs(xx))))
            _accumulate(a, g * s)
        return vjp

    return _from_op(data, (a,), make_vjp)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def make_vjp():
        active = a.data > 0

        def vjp(g):
            _accumulate(a, g * active)
        return vjp

    return _from_op(data, (a,), make_vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis to mean 0, variance 1, then apply gain/bias.

    The variance estimate is floored at ``eps`` instead of being inflated by
    it, so ordinary rows come out with variance 1 to float precision while
    constant rows map to zero without a division by zero.
    """
    width = x.data.shape[-1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({width},), got "
            f"{gain.data.shape} and {bias.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    denom = np.sqrt(np.maximum(var, eps))
    xhat = centered / denom
    data = xhat * gain.data + bias.data

    def make_vjp():
        floored = var <= eps

        def vjp(g):
            if gain.requires_grad:
                _accumulate(gain, (g * xhat).reshape(-1, width).sum(axis=0))
            if bias.requires_grad:
                _accumulate(bias, g.reshape(-1, width).sum(axis=0))
            if x.requires_grad:
                gx = g * gain.data
                mean_gx = gx.mean(axis=-1, keepdims=True)
                mean_gx_xhat = (gx * xhat).mean(axis=-1, keepdims=True)
                # the variance term vanishes where the eps floor is active
                correction = np.where(floored, 0.0, xhat * mean_gx_xhat)
                _accumulate(x, (gx - mean_gx - correction) / denom)
        return vjp

    return _from_op(data, (x, gain, bias), make_vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout: train-time Bernoulli mask with 1/(1-p) rescale.

    In eval mode (or with p == 0) the input tensor is returned unchanged,
    so eval is the identity bit for bit.
    """
    if not training or p == 0.0:
        return x
    if not 0.0 < p < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {p}")
    if rng is None:
        raise ContractError("dropout in training mode needs an RNG")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    data = x.data * keep

    def make_vjp():
        def vjp(g):
            _accumulate(x, g * keep)
        return vjp

    return _from_op(data, (x,), make_vjp)


def masked_fill(x: Tensor, keep_mask, fill_value: float) -> Tensor:
    """Keep entries where ``keep_mask`` is true, replace the rest by a constant.

    The mask broadcasts against ``x``; gradient flows only through kept slots.
    """
    keep = np.asarray(keep_mask, dtype=bool)
    data = np.where(keep, x.data, fill_value)

    def make_vjp():
        def vjp(g):
            _accumulate(x, _unbroadcast(np.where(keep, g, 0.0), x.data.shape))
        return vjp

    return _from_op(data, (x,), make_vjp)


# ---------------------------------------------------------------------------
# serialization: "TBJT" little-endian tensor format
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"TBJT"


def write_array(fh, arr: np.ndarray) -> None:
    """Write one array: magic, u8 rank, u32 extents, raw f64 payload."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim > 255:
        raise ShapeError(f"rank {arr.ndim} exceeds the u8 rank field")
    fh.write(TENSOR_MAGIC)
    fh.write(bytes([arr.ndim]))
    fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
    fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_array(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise ContractError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    rank = fh.read(1)[0]
    shape = tuple(np.frombuffer(fh.read(4 * rank), dtype="<u4").astype(int))
    count = int(math.prod(shape)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ContractError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def save_array(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_array(fh, arr)


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_array(fh)
