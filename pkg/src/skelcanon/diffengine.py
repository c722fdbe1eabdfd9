"""Minimal reverse-mode differentiation over dense numpy grids.

A tape of ``Tensor`` nodes is built during the forward pass; each op
stores a closure computing parent gradients. ``backpropagate`` walks the
graph once in reverse topological order and accumulates gradients into
leaf tensors (parameters and inputs created with ``requires_grad=True``).

Only the operations the networks need are provided: temporal 1-D
convolution, leaky rectifier, temporal/global max pooling, nearest
upsampling, per-frame point rotation, a 2-D matmul for the classifier
head, and elementwise/reduction arithmetic. Heavy ops reduce to BLAS
matmuls via im2col so float32 training runs at a usable speed on CPU.
"""

from __future__ import annotations

import numpy as np

from .errors import MissingGradients, NotScalar, NumericError, ShapeMismatch

_GRAD_ENABLED = True
_DEBUG_FINITE = False


def set_debug_checks(on: bool) -> None:
    """Enable NaN/Inf assertions after every forward op (slow; for tests)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(on)


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class Tensor:
    """A dense real grid with an optional gradient slot.

    ``requires_grad`` is True for leaves that should collect gradients and
    for any node derived from one; only leaves ever hold ``.grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

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

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced in forward pass")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data)
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data - b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return _result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _result(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
              if b.requires_grad else None)
        return ga, gb

    return _result(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (-g,)

    return _result(-a.data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)

    def backward(g):
        return (g * sign,)

    return _result(np.abs(a.data), (a,), backward)


def log(a: Tensor) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (g / a.data,)

    return _result(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * out),)

    return _result(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), backward)


def clip_min(a: Tensor, lo: float) -> Tensor:
    a = _wrap(a)
    mask = a.data > lo

    def backward(g):
        return (g * mask,)

    return _result(np.maximum(a.data, lo), (a,), backward)


def clip_max(a: Tensor, hi: float) -> Tensor:
    a = _wrap(a)
    mask = a.data < hi

    def backward(g):
        return (g * mask,)

    return _result(np.minimum(a.data, hi), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = _wrap(a)
    pos = a.data >= 0
    out = np.where(pos, a.data, slope * a.data)

    def backward(g):
        return (np.where(pos, g, slope * g),)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gx = np.asarray(g)
        if axis is not None and not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx, a.data.shape),)

    return _result(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        gx = np.asarray(g) / count
        if axis is not None and not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx, a.data.shape),)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    old = a.data.shape

    def backward(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), (a,), backward)


def moveaxis(a: Tensor, src, dst) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (np.moveaxis(g, dst, src),)

    return _result(np.moveaxis(a.data, src, dst), (a,), backward)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int/ellipsis) indexing; no duplicate-index support."""
    a = _wrap(a)
    out = a.data[idx]

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[idx] += g
        return (gx,)

    return _result(np.array(out, copy=True), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for i, t in enumerate(tensors):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(sl)])
            else:
                grads.append(None)
        return tuple(grads)

    return _result(out, tuple(tensors), backward)


def stack(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if t.requires_grad else None
                     for i, t in enumerate(tensors))

    return _result(out, tuple(tensors), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (_unbroadcast(g, a.data.shape),)

    return _result(np.broadcast_to(a.data, shape), (a,), backward)


# ---------------------------------------------------------------------------
# network operations


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0, pad_mode: str = "zero") -> Tensor:
    """Temporal cross-correlation along the last axis.

    ``x`` is (C_in, T) or (B, C_in, T); ``w`` is (C_out, C_in, k); ``b`` is
    (C_out,). Output length is floor((T + 2*padding - k)/stride) + 1.
    ``pad_mode`` is ``"zero"`` or ``"circular"`` (wrap-around, which keeps
    features translation-consistent across clip borders).
    """
    x, w = _wrap(x), _wrap(w)
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    if xd.ndim != 3 or w.data.ndim != 3:
        raise ShapeMismatch("conv1d expects (B, C_in, T) input and (C_out, C_in, k) kernel")
    n_b, c_in, t = xd.shape
    c_out, c_in_w, k = w.data.shape
    if c_in_w != c_in:
        raise ShapeMismatch(f"kernel expects {c_in_w} input channels, got {c_in}")
    if stride < 1:
        raise ShapeMismatch("stride must be >= 1")
    if t + 2 * padding < k:
        raise ShapeMismatch(f"input length {t} too short for kernel {k} with padding {padding}")
    if b is not None:
        b = _wrap(b, w)
        if b.data.shape != (c_out,):
            raise ShapeMismatch(f"bias must have shape ({c_out},), got {b.data.shape}")

    if pad_mode not in ("zero", "circular"):
        raise ShapeMismatch(f"unknown pad_mode {pad_mode!r}")
    if pad_mode == "circular" and padding > t:
        raise ShapeMismatch("circular padding wider than the sequence")
    t_out = (t + 2 * padding - k) // stride + 1
    if padding:
        mode = "wrap" if pad_mode == "circular" else "constant"
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)), mode=mode)
    else:
        xp = xd
    s_b, s_c, s_t = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n_b, c_in, t_out, k), (s_b, s_c, s_t * stride, s_t))
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n_b * t_out, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    out = cols @ w2.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n_b, t_out, c_out).transpose(0, 2, 1)
    if squeeze:
        out = out[0]

    def backward(g):
        if squeeze:
            g = g[None]
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n_b * t_out, c_out)
        gw = (g2.T @ cols).reshape(c_out, c_in, k) if w.requires_grad else None
        gb = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(n_b, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j : j + stride * t_out : stride] += gcols[:, :, :, j]
            if padding:
                gx = np.ascontiguousarray(gxp[:, :, padding : padding + t])
                if pad_mode == "circular":
                    gx[:, :, t - padding :] += gxp[:, :, :padding]
                    gx[:, :, :padding] += gxp[:, :, padding + t :]
            else:
                gx = gxp
            if squeeze:
                gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward)


def temporal_max_pool(a: Tensor, window: int) -> Tensor:
    """Per-channel max over non-overlapping temporal windows."""
    a = _wrap(a)
    xd = a.data
    t = xd.shape[-1]
    if window < 1 or t % window != 0:
        raise ShapeMismatch(f"length {t} not divisible by pool window {window}")
    xr = xd.reshape(xd.shape[:-1] + (t // window, window))
    arg = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxr = np.zeros_like(xr)
        np.put_along_axis(gxr, arg[..., None], np.asarray(g)[..., None], axis=-1)
        return (gxr.reshape(xd.shape),)

    return _result(out, (a,), backward)


def global_max_pool(a: Tensor) -> Tensor:
    """Max over the entire temporal axis: (..., C, T) -> (..., C)."""
    a = _wrap(a)
    xd = a.data
    arg = xd.argmax(axis=-1)
    out = np.take_along_axis(xd, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, arg[..., None], np.asarray(g)[..., None], axis=-1)
        return (gx,)

    return _result(out, (a,), backward)


def upsample_nearest(a: Tensor, factor: int = 2) -> Tensor:
    """Repeat each time step ``factor`` times along the last axis."""
    a = _wrap(a)
    xd = a.data

    def backward(g):
        return (g.reshape(xd.shape + (factor,)).sum(axis=-1),)

    return _result(np.repeat(xd, factor, axis=-1), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product for the classifier head."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch("matmul expects 2-D operands")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def rotate_points(x: Tensor, r: Tensor) -> Tensor:
    """Apply per-frame rotation matrices to point sequences.

    ``x`` is (B, N, T, 3); ``r`` is (B, T, 3, 3) (stride-0 broadcast views
    are fine for constant tracks). out[b,n,t] = r[b,t] @ x[b,n,t].
    """
    x, r = _wrap(x), _wrap(r)
    xd, rd = x.data, r.data
    if xd.ndim != 4 or xd.shape[-1] != 3 or rd.ndim != 4 or rd.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"rotate_points got shapes {xd.shape} and {rd.shape}")
    if rd.shape[0] != xd.shape[0] or rd.shape[1] != xd.shape[2]:
        raise ShapeMismatch(f"batch/frames mismatch: {xd.shape} vs {rd.shape}")
    out = np.einsum("btij,bntj->bnti", rd, xd)

    def backward(g):
        gx = np.einsum("btij,bnti->bntj", rd, g) if x.requires_grad else None
        gr = np.einsum("bnti,bntj->btij", g, xd) if r.requires_grad else None
        return gx, gr

    return _result(out, (x, r), backward)


# ---------------------------------------------------------------------------
# backward pass


def backpropagate(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Repeated calls without clearing gradients accumulate. ``loss`` must be
    a scalar node of a recorded graph.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise NotScalar("backpropagate requires a scalar loss tensor")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if _DEBUG_FINITE and not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in backward pass")
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# parameters and optimizer


class ParamStore:
    """Named parameters with per-parameter Adam moment accumulators."""

    def __init__(self, name: str = ""):
        self.name = name
        self._params: dict[str, Tensor] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


def adam_step(store: ParamStore, lr: float,
              betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update; clears gradients afterwards."""
    missing = [n for n, t in store.items() if t.grad is None]
    if missing:
        raise MissingGradients(f"no gradient for parameters: {missing[:4]}")
    b1, b2 = betas
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.items():
        g = p.grad
        m = store.moment1.get(name)
        v = store.moment2.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        store.moment1[name] = m
        store.moment2[name] = v
        # rebind rather than mutate: older graph nodes may hold views of data
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
