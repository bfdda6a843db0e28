"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray plus an optional closure that maps the incoming
gradient to gradients for its parents. backward() runs a topological sweep
and accumulates into .grad. Only the ops this project needs are provided;
all of them are batch-first and broadcasting-aware.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, digamma, polygamma, ndtr

__all__ = [
    "Tensor", "constant", "parameter",
    "add", "sub", "mul", "div", "neg", "matmul", "power",
    "tsum", "tmean", "reshape", "transpose", "broadcast_to",
    "exp", "log", "sqrt", "relu", "softplus", "gelu", "softmax",
    "layer_norm", "standardize", "depthwise_conv3x3", "patchify",
    "dirichlet_kl_uniform",
]

_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Node in the computation graph. value is always an ndarray."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, value, requires_grad=False, _parents=(), _grad_fn=None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._grad_fn = _grad_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of self w.r.t. every reachable leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=self.value.dtype)

        # iterative topological order (graphs can be a few hundred nodes deep)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._grad_fn is None or node.grad is None:
                continue
            for p, g in zip(node._parents, node._grad_fn(node.grad)):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype}, requires_grad={self.requires_grad})"


def constant(value, dtype=None) -> Tensor:
    arr = np.asarray(value, dtype=dtype)
    return Tensor(arr)


def parameter(value) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=True)


def _ensure(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.value.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast up from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---- arithmetic ----

def add(a, b) -> Tensor:
    a = _ensure(a)
    b = _ensure(b, like=a)
    out = a.value + b.value

    def grad_fn(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def sub(a, b) -> Tensor:
    a = _ensure(a)
    b = _ensure(b, like=a)
    out = a.value - b.value

    def grad_fn(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def mul(a, b) -> Tensor:
    a = _ensure(a)
    b = _ensure(b, like=a)
    out = a.value * b.value

    def grad_fn(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def div(a, b) -> Tensor:
    a = _ensure(a)
    b = _ensure(b, like=a)
    out = a.value / b.value

    def grad_fn(g):
        return (_unbroadcast(g / b.value, a.value.shape),
                _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def neg(a) -> Tensor:
    a = _ensure(a)
    return Tensor(-a.value, _parents=(a,), _grad_fn=lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _ensure(a)
    p = float(p)
    out = a.value ** p

    def grad_fn(g):
        return (g * p * a.value ** (p - 1.0),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def matmul(a, b) -> Tensor:
    a = _ensure(a)
    b = _ensure(b, like=a)
    out = np.matmul(a.value, b.value)

    def grad_fn(g):
        ga = np.matmul(g, b.value.swapaxes(-1, -2))
        gb = np.matmul(a.value.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


# ---- reductions and shape ----

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _ensure(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % a.value.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.value.shape).astype(a.value.dtype, copy=False),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _ensure(a)
    if axis is None:
        n = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.value.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    out = a.value.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.value.shape),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def transpose(a, axes) -> Tensor:
    a = _ensure(a)
    out = a.value.transpose(axes)
    inv = np.argsort(axes)

    def grad_fn(g):
        return (g.transpose(inv),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def broadcast_to(a, shape) -> Tensor:
    a = _ensure(a)
    out = np.broadcast_to(a.value, shape)

    def grad_fn(g):
        return (_unbroadcast(g, a.value.shape),)

    return Tensor(np.ascontiguousarray(out), _parents=(a,), _grad_fn=grad_fn)


# ---- elementwise nonlinearities ----

def exp(a) -> Tensor:
    a = _ensure(a)
    out = np.exp(a.value)

    def grad_fn(g):
        return (g * out,)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def log(a) -> Tensor:
    a = _ensure(a)
    out = np.log(a.value)

    def grad_fn(g):
        return (g / a.value,)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def sqrt(a) -> Tensor:
    a = _ensure(a)
    out = np.sqrt(a.value)

    def grad_fn(g):
        return (g * 0.5 / out,)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def relu(a) -> Tensor:
    a = _ensure(a)
    out = np.maximum(a.value, 0.0)

    def grad_fn(g):
        return (g * (a.value > 0.0),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def softplus(a) -> Tensor:
    a = _ensure(a)
    out = np.logaddexp(0.0, a.value).astype(a.value.dtype, copy=False)

    def grad_fn(g):
        return (g * expit(a.value),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit: x * Phi(x)."""
    a = _ensure(a)
    phi_cdf = ndtr(a.value)
    out = (a.value * phi_cdf).astype(a.value.dtype, copy=False)

    def grad_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.value * a.value)
        return (g * (phi_cdf + a.value * pdf),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def softmax(a, axis=-1) -> Tensor:
    a = _ensure(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gain), offset)


def standardize(x, eps: float = 1e-5) -> Tensor:
    """Parameter-free layer normalization of the last axis."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    return mul(xc, power(add(var, eps), -0.5))


# ---- structured ops ----

def depthwise_conv3x3(x, w) -> Tensor:
    """Per-channel 3x3 convolution with same zero padding.

    x: (B, H, W, C), w: (3, 3, C).
    """
    x = _ensure(x)
    w = _ensure(w, like=x)
    if x.value.ndim != 4 or w.value.shape[:2] != (3, 3):
        raise ValueError("depthwise_conv3x3 expects x (B,H,W,C) and w (3,3,C)")
    b, h, wd, c = x.value.shape
    xp = np.pad(x.value, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(x.value)
    for di in range(3):
        for dj in range(3):
            out += w.value[di, dj] * xp[:, di:di + h, dj:dj + wd, :]

    def grad_fn(g):
        gp = np.zeros_like(xp)
        gw = np.zeros_like(w.value)
        for di in range(3):
            for dj in range(3):
                gp[:, di:di + h, dj:dj + wd, :] += g * w.value[di, dj]
                gw[di, dj] = np.einsum("bhwc,bhwc->c", g, xp[:, di:di + h, dj:dj + wd, :])
        return gp[:, 1:1 + h, 1:1 + wd, :], gw

    return Tensor(out, _parents=(x, w), _grad_fn=grad_fn)


def patchify(x, patch: int) -> Tensor:
    """Space-to-depth: (B, H, W, C) -> (B, H/p, W/p, p*p*C), row-major."""
    x = _ensure(x)
    b, h, w, c = x.value.shape
    p = int(patch)
    if h % p or w % p:
        raise ValueError(f"spatial size {(h, w)} not divisible by patch {p}")
    hp, wp = h // p, w // p
    out = (x.value.reshape(b, hp, p, wp, p, c)
           .transpose(0, 1, 3, 2, 4, 5)
           .reshape(b, hp, wp, p * p * c))

    def grad_fn(g):
        gx = (g.reshape(b, hp, wp, p, p, c)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(b, h, w, c))
        return (gx,)

    return Tensor(np.ascontiguousarray(out), _parents=(x,), _grad_fn=grad_fn)


def dirichlet_kl_uniform(alpha) -> Tensor:
    """KL( Dir(alpha) || Dir(1) ) for two-component concentrations.

    alpha: (..., 2) with entries >= 1. Returns shape (...,). The gradient
    uses d/d alpha_c = (alpha_c - 1) psi'(alpha_c) - (S - 2) psi'(S).
    """
    alpha = _ensure(alpha)
    a = alpha.value
    if a.shape[-1] != 2:
        raise ValueError("dirichlet_kl_uniform expects trailing axis of size 2")
    s = a.sum(axis=-1)
    out = (gammaln(s) - gammaln(a).sum(axis=-1)
           + ((a - 1.0) * (digamma(a) - digamma(s)[..., None])).sum(axis=-1))
    out = out.astype(a.dtype, copy=False)

    def grad_fn(g):
        trig_a = polygamma(1, a)
        trig_s = polygamma(1, s)
        d = (a - 1.0) * trig_a - ((s - 2.0) * trig_s)[..., None]
        return ((g[..., None] * d).astype(a.dtype, copy=False),)

    return Tensor(out, _parents=(alpha,), _grad_fn=grad_fn)
