"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every forward op builds a fresh graph node holding a closure that maps the
upstream gradient to gradients for its parents. ``Tensor.backward`` walks
the graph once in reverse topological order and then releases it.
"""
from __future__ import annotations

import contextlib
import math
from numbers import Number

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand extents do not conform."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        if self._backward is None and not isinstance(self, Parameter) and self.grad is not None:
            raise RuntimeError("graph already consumed; run the forward pass again")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            g = node.grad
            grads = node._backward(g)
            for p, pg in zip(node._parents, grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    pg = _unbroadcast(pg, p.data.shape)
                p.grad = pg if p.grad is None else p.grad + pg
            # single-use graph: drop references so intermediates can be freed
            node._backward = None
            node._parents = ()
            if node is not self:
                node.grad = None

    # -- operator sugar ------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # make ndarray (op) Tensor defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Parameter(Tensor):
    """A named leaf tensor that always tracks gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


# ---------------------------------------------------------------------------
# helpers

def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _node(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    if isinstance(b, Number):
        a = as_tensor(a)
        return _node(a.data + b, (a,), lambda g: (g,))
    if isinstance(a, Number):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if isinstance(b, Number):
        a = as_tensor(a)
        return _node(a.data - b, (a,), lambda g: (g,))
    if isinstance(a, Number):
        b = as_tensor(b)
        return _node(a - b.data, (b,), lambda g: (-g,))
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if isinstance(b, Number):
        a = as_tensor(a)
        return _node(a.data * b, (a,), lambda g: (g * b,))
    if isinstance(a, Number):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd if a.requires_grad else None,
                                             g * ad if b.requires_grad else None))


def div(a, b) -> Tensor:
    if isinstance(b, Number):
        return mul(a, 1.0 / b)
    if isinstance(a, Number):
        b = as_tensor(b)
        out = a / b.data
        return _node(out, (b,), lambda g: (-g * out / b.data,))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b), lambda g: (g / bd if a.requires_grad else None,
                                         -g * out / bd if b.requires_grad else None))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if exponent == 0.5:
        out = np.sqrt(ad)
        return _node(out, (a,), lambda g: (g * 0.5 / out,))
    return _node(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows
    out = 0.5 * (1 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU; smooth everywhere, which keeps
    finite-difference checks clean."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def backward(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops

_ROW_BLOCK = 32


def _gemm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w over the last two axes.

    BLAS picks kernels (and so summation orders) by problem size, which
    makes a row's result depend on how many rows share the call. With
    gradients disabled (inference) the rows are pushed through fixed-size
    zero-padded blocks instead, so every row sees the identical call and
    features are bit-identical under any batch grouping.
    """
    n = x.shape[-2]
    if _GRAD_ENABLED or n == 0:
        return x @ w
    pad = -n % _ROW_BLOCK
    if pad:
        widths = [(0, 0)] * x.ndim
        widths[-2] = (0, pad)
        x = np.pad(x, widths)
    blocks = [x[..., i:i + _ROW_BLOCK, :] @ w for i in range(0, n + pad, _ROW_BLOCK)]
    return np.concatenate(blocks, axis=-2)[..., :n, :]


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    nb = bd.ndim - 2
    if ad.ndim > bd.ndim and ad.shape[ad.ndim - 2 - nb:-2] == bd.shape[:-2]:
        return _folded_matmul(a, b)

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _node(_gemm(ad, bd), (a, b), backward)


def _folded_matmul(a, b) -> Tensor:
    """a: (*extra, *batch, n, k) against b: (*batch, k, m).

    The extra leading axes of ``a`` are folded into the row dimension so
    the product runs as len(batch) GEMMs instead of a per-slice loop; the
    weight gradient then comes out already summed over the extra axes.
    """
    ad, bd = a.data, b.data
    nb = bd.ndim - 2
    ne = ad.ndim - bd.ndim
    n, k = ad.shape[-2:]
    extra, batch = ad.shape[:ne], ad.shape[ne:ne + nb]
    E = int(np.prod(extra)) if extra else 1
    # (*extra, *batch, n, k) -> (*batch, E*n, k)
    perm = tuple(range(ne, ne + nb)) + tuple(range(ne)) + (ad.ndim - 2, ad.ndim - 1)
    a_f = np.transpose(ad, perm).reshape(batch + (E * n, k))
    out_f = _gemm(a_f, bd)
    m = bd.shape[-1]
    inv = np.argsort(perm)
    out = out_f.reshape(batch + extra + (n, m)).transpose(inv)

    def backward(g):
        g_f = np.transpose(g, perm).reshape(batch + (E * n, m))
        ga = gb = None
        if a.requires_grad:
            ga = (g_f @ np.swapaxes(bd, -1, -2)).reshape(batch + extra + (n, k)).transpose(inv)
        if b.requires_grad:
            gb = np.swapaxes(a_f, -1, -2) @ g_f
        return ga, gb

    return _node(np.ascontiguousarray(out), (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    fancy = _is_fancy(idx)

    def backward(g):
        ga = np.zeros_like(a.data)
        if fancy:
            np.add.at(ga, idx, g)
        else:
            ga[idx] = g
        return (ga,)

    return _node(out, (a,), backward)


def _is_fancy(idx):
    if isinstance(idx, tuple):
        return any(isinstance(i, (np.ndarray, list)) for i in idx)
    return isinstance(idx, (np.ndarray, list))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(out, tensors, backward)


# ---------------------------------------------------------------------------
# reductions and normalizations

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax with max subtraction; rows of -inf logits get zero weight."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward)


def softmax_rows(x) -> Tensor:
    """Row-wise softmax of an m x n matrix."""
    return softmax(x, axis=-1)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-channel gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    centered = xd - xd.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    out = xhat * gain.data + bias.data
    n = xd.shape[-1]

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gbias = g.sum(axis=lead) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxh = g * gain.data
            gx = (rstd / n) * (n * gxh - gxh.sum(axis=-1, keepdims=True)
                               - xhat * (gxh * xhat).sum(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _node(out, (x, gain, bias), backward)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = as_tensor(x)
    norm = power(tsum(mul(x, x), axis=axis, keepdims=True) + eps * eps, 0.5)
    return div(x, norm)


# ---------------------------------------------------------------------------
# optimization

class AdamState:
    """First/second moment buffers for a fixed list of parameters."""

    def __init__(self, params):
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState, lr: float | list,
              betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``lr`` may be a scalar or one rate per parameter. A ``None`` gradient is
    treated as zero.
    """
    b1, b2 = betas
    state.t += 1
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    rates = lr if isinstance(lr, (list, tuple)) else [lr] * len(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (rates[i] * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState(self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  self.lr, self.betas, self.eps)


# ---------------------------------------------------------------------------
# gradient checking

def check_gradients(f, params, h: float = 1e-5) -> float:
    """Compare backprop gradients with central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from
    ``params``; it must be deterministic. Returns the maximum over all
    parameter entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters; {getattr(p, 'name', p)} is {p.data.dtype}")

    for p in params:
        p.grad = None
    loss = f()
    if loss.requires_grad:
        loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.flat
            a_flat = a.reshape(-1)
            for i in range(p.data.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]), abs(num))
                worst = max(worst, err)
    return worst
