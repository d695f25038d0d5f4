"""Small reverse-mode autodiff over dense numpy arrays.

Operations executed inside a ``Tape`` context are recorded as a Wengert
list; ``Tape.backward`` replays that list once, in reverse.  Only what the
VAE needs is here: dense and strided convolutional layers, elementwise
nonlinearities, reductions, and an Adam optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class AutodiffError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        # python scalars stay weakly typed so float32 graphs are not upcast
        self.data = float(data) if type(data) in (int, float) else np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return np.shape(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: Callable


@dataclass
class Tape:
    records: list = field(default_factory=list)
    _produced: set = field(default_factory=set)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.records.append(_Record(out, tuple(inputs), backward))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> dict:
        """Backpropagate from a scalar ``loss``.

        Returns ``{leaf_tensor_id: grad}`` and sets ``.grad`` on every leaf
        tensor that requires grad and took part in the traced computation.
        """
        if id(loss) not in self._produced:
            raise AutodiffError("loss was not produced by a traced computation on this tape")
        if np.size(loss.data) != 1:
            raise AutodiffError("backward needs a scalar loss")
        grads = {id(loss): np.ones_like(np.asarray(loss.data))}
        leaves = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, ig in zip(rec.inputs, rec.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if key not in self._produced:
                    leaves[key] = inp
        out = {}
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
            out[key] = grads[key]
        return out


_TAPES: list[Tape] = []


def _emit(data, inputs, backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1].record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise AutodiffError(f"shape mismatch: {a.shape} vs {b.shape}") from None


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a) -> Tensor:
    """log(1 + e^x), computed stably."""
    a = as_tensor(a)
    x = a.data
    y = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _emit(y, (a,), lambda g: (g * _sigmoid(x),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(a.data * mask, (a,), lambda g: (g * mask,))


# shape and reductions ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise AutodiffError(str(exc)) from None
    return _emit(y, (a,), lambda g: (g.reshape(a.shape),))


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    y = np.sum(a.data, axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else axis
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)

    return _emit(y, (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = np.size(a.data) if axis is None else a.data.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.ndim(a.data) < 1 or np.ndim(b.data) < 1 or a.shape[-1] != b.shape[0]:
        raise AutodiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data)
        if a.data.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = a.data.T @ g
        return ga.reshape(a.shape), gb.reshape(b.shape)

    return _emit(a.data @ b.data, (a, b), back)


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _im2col(x, kh, kw, stride, padding, out_hw):
    """(N,C,H,W) -> (N,Ho,Wo,C,kh,kw) patches after zero padding."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho, wo = out_hw
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def _col2im(cols, x_shape, stride, padding):
    """Adjoint of ``_im2col``: scatter-add patches back into an image."""
    n, c, h, w = x_shape
    _, ho, wo, _, kh, kw = cols.shape
    hp = max(h + 2 * padding, (ho - 1) * stride + kh)
    wp = max(w + 2 * padding, (wo - 1) * stride + kw)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += cols[..., i, j]
    return out[:, :, padding : padding + h, padding : padding + w]


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation. x: (N,C,H,W), w: (O,C,kh,kw) -> (N,O,Ho,Wo)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise AutodiffError(f"conv2d shape mismatch: {x.shape} * {w.shape}")
    _, _, h, wd = x.shape
    _, _, kh, kw = w.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise AutodiffError("kernel larger than padded input")
    cols = _im2col(x.data, kh, kw, stride, padding, (ho, wo))
    y = np.tensordot(cols, w.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def back(g):
        g = g.transpose(0, 2, 3, 1)
        gw = np.tensordot(g, cols, axes=([0, 1, 2], [0, 1, 2]))
        gcols = np.tensordot(g, w.data, axes=([3], [0]))
        return _col2im(gcols, x.shape, stride, padding), gw

    return _emit(np.ascontiguousarray(y), (x, w), back)


def conv_transpose2d(x, w, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution. x: (N,Cin,H,W), w: (Cin,Cout,kh,kw) -> (N,Cout,Ho,Wo)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0]:
        raise AutodiffError(f"conv_transpose2d shape mismatch: {x.shape} * {w.shape}")
    n, _, h, wd = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (wd - 1) * stride - 2 * padding + kw + output_padding
    xt = x.data.transpose(0, 2, 3, 1)
    cols = np.tensordot(xt, w.data, axes=([3], [0]))
    y = _col2im(cols, (n, cout, ho, wo), stride, padding)

    def back(g):
        gcols = _im2col(g, kh, kw, stride, padding, (h, wd))
        gx = np.tensordot(gcols, w.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(xt, gcols, axes=([0, 1, 2], [0, 1, 2]))
        return np.ascontiguousarray(gx), gw

    return _emit(y, (x, w), back)


# optimizer -----------------------------------------------------------------

def adam_step(param, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction.  Returns ``(param, m, v)``."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            p.data, self.m[i], self.v[i] = adam_step(
                p.data, p.grad, self.m[i], self.v[i], self.t, self.lr, self.beta1, self.beta2, self.eps
            )

    def zero_grad(self):
        for p in self.params:
            p.grad = None
