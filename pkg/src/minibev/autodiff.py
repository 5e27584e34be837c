"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float ndarray plus an optional gradient buffer and a
backward closure.  ``backward()`` on a scalar output walks the recorded
graph in reverse topological order and accumulates gradients into every
reachable tensor with ``requires_grad=True``.

The op set is deliberately small: elementwise arithmetic with numpy-style
broadcasting, matmul, shape ops, reductions, a handful of smooth
nonlinearities, gather/scatter by integer index, and a fused bilinear map
sampler with analytic gradients with respect to both the map and the
sampling locations.  Everything runs in the dtype of its inputs; float64
is the package default.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else data.dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"

    # -- graph plumbing --------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return mul(self, power(as_tensor(other), -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Trainable tensor; with ``rng`` and ``scale`` draws N(0, scale^2)."""
    if rng is not None:
        data = rng.normal(0.0, scale if scale is not None else 1.0, size=data)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
        out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data
    a_vec = a.data.ndim == 1
    b_vec = b.data.ndim == 1

    def backward(g):
        ad_, bd = a.data, b.data
        if a.requires_grad or a._parents:
            if a_vec and b_vec:
                ga = g * bd
            elif b_vec:  # (..., m, n) @ (n,) -> (..., m)
                ga = np.multiply.outer(g, bd) if g.ndim == 1 else g[..., :, None] * bd
            elif a_vec:  # (n,) @ (..., n, k) -> (..., k)
                ga = bd @ g if bd.ndim == 2 else (bd * g[..., None, :]).sum(axis=-1)
            else:
                ga = g @ np.swapaxes(bd, -1, -2)
            a._accumulate(_unbroadcast(ga, ad_.shape))
        if b.requires_grad or b._parents:
            if a_vec and b_vec:
                gb = g * ad_
            elif b_vec:  # dB_n = sum over batch of A[..., n] * g[...]
                gb = np.einsum("...mn,...m->n", ad_, g)
            elif a_vec:
                gb = np.multiply.outer(ad_, g) if g.ndim == 1 else ad_[:, None] * g
            else:
                gb = np.swapaxes(ad_, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, bd.shape))

    return _make(out_data, (a, b), backward)


# -- shape ops -----------------------------------------------------------------


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes) if axes is not None else None

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        for t, part in zip(tensors, parts):
            if t.requires_grad or t._parents:
                t._accumulate(part)

    return _make(out_data, tuple(tensors), backward)


def gather_rows(a, idx) -> Tensor:
    """Select rows of a 2-D (or N-D, leading axis) tensor by integer index."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a._accumulate(ga)

    return _make(out_data, (a,), backward)


def scatter_rows_overwrite(base, idx, rows) -> Tensor:
    """Copy of ``base`` with ``base[idx] = rows``; duplicate indices must
    not occur (enforced by callers)."""
    base, rows = as_tensor(base), as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    out_data = base.data.copy()
    out_data[idx] = rows.data

    def backward(g):
        if base.requires_grad or base._parents:
            gb = g.copy()
            gb[idx] = 0.0
            base._accumulate(gb)
        if rows.requires_grad or rows._parents:
            rows._accumulate(g[idx])

    return _make(out_data, (base, rows), backward)


# -- reductions -----------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- nonlinearities ---------------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed without overflow; gradient is sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        a._accumulate(g * s)

    return _make(out_data, (a,), backward)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU; smooth everywhere, safe for gradient checks."""
    a = as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out_data = x * phi

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        a._accumulate(g * (phi + x * pdf))

    return _make(out_data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), backward)


def layer_norm(a, gain, bias, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Normalize over ``axis`` then apply an elementwise affine."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    n = x.shape[axis]

    def backward(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad or bias._parents:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if a.requires_grad or a._parents:
            gx_hat = g * gain.data
            term1 = gx_hat
            term2 = gx_hat.mean(axis=axis, keepdims=True)
            term3 = xhat * (gx_hat * xhat).mean(axis=axis, keepdims=True)
            a._accumulate(inv * (term1 - term2 - term3))

    _ = n
    return _make(out_data, (a, gain, bias), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(out_data, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through inside the range."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        inside = (a.data >= lo) & (a.data <= hi)
        a._accumulate(g * inside)

    return _make(out_data, (a,), backward)


# -- fused bilinear sampling -------------------------------------------------------


def bilinear_many(feat, h: int, w: int, locs) -> Tensor:
    """Sample a flattened feature map at many normalized locations.

    ``feat`` has shape (h*w, C) in row-major (row, col) order; ``locs`` has
    shape (M, 2) holding normalized (u, v) with u along columns and v along
    rows.  Grid nodes sit at pixel centers, so u = (col + 0.5)/w hits the
    column exactly.  Out-of-range samples fade to zero (zero padding).
    Gradients flow to both the map and the locations; the location
    gradient is the analytic derivative of the interpolation weights.
    """
    feat, locs = as_tensor(feat), as_tensor(locs)
    if feat.data.shape[0] != h * w:
        raise ValueError(f"feature rows {feat.data.shape[0]} != h*w = {h * w}")
    x = locs.data[:, 0] * w - 0.5
    y = locs.data[:, 1] * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    def corner(ix, iy):
        valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        flat = np.where(valid, iy * w + ix, 0)
        return flat, valid

    f00, v00 = corner(x0, y0)
    f10, v10 = corner(x0 + 1, y0)
    f01, v01 = corner(x0, y0 + 1)
    f11, v11 = corner(x0 + 1, y0 + 1)
    w00 = (1 - fx) * (1 - fy) * v00
    w10 = fx * (1 - fy) * v10
    w01 = (1 - fx) * fy * v01
    w11 = fx * fy * v11
    fd = feat.data
    out_data = (
        fd[f00] * w00[:, None]
        + fd[f10] * w10[:, None]
        + fd[f01] * w01[:, None]
        + fd[f11] * w11[:, None]
    )

    def backward(g):
        if feat.requires_grad or feat._parents:
            gf = np.zeros_like(fd)
            np.add.at(gf, f00, g * w00[:, None])
            np.add.at(gf, f10, g * w10[:, None])
            np.add.at(gf, f01, g * w01[:, None])
            np.add.at(gf, f11, g * w11[:, None])
            feat._accumulate(gf)
        if locs.requires_grad or locs._parents:
            # d out / d x and d out / d y per sample, contracted with g
            dval_dx = (
                (fd[f10] * v10[:, None] - fd[f00] * v00[:, None]) * (1 - fy)[:, None]
                + (fd[f11] * v11[:, None] - fd[f01] * v01[:, None]) * fy[:, None]
            )
            dval_dy = (
                (fd[f01] * v01[:, None] - fd[f00] * v00[:, None]) * (1 - fx)[:, None]
                + (fd[f11] * v11[:, None] - fd[f10] * v10[:, None]) * fx[:, None]
            )
            gl = np.stack(
                [(g * dval_dx).sum(axis=1) * w, (g * dval_dy).sum(axis=1) * h],
                axis=1,
            )
            locs._accumulate(gl)

    return _make(out_data, (feat, locs), backward)


# -- gradient checking -------------------------------------------------------------


def gradcheck(
    fn,
    tensors: dict[str, Tensor],
    rtol: float = 1e-6,
    atol: float = 1e-9,
    h: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare analytic gradients of scalar ``fn()`` to central differences.

    ``fn`` must recompute the forward pass from the current contents of
    ``tensors`` on every call.  A coordinate passes when
    ``|fd - analytic| <= atol + rtol * |fd|``.  Returns the max scaled
    error per tensor name; raises AssertionError on failure.
    """
    for t in tensors.values():
        t.zero_grad()
    out = fn()
    out.backward()
    analytic = {}
    for name, t in tensors.items():
        if t.grad is None:
            analytic[name] = np.zeros_like(t.data)
        else:
            analytic[name] = t.grad.copy()

    errors: dict[str, float] = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            picker = rng if rng is not None else np.random.default_rng(0)
            coords = picker.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            step = h * max(1.0, abs(orig))
            flat[c] = orig + step
            f_plus = fn().item()
            flat[c] = orig - step
            f_minus = fn().item()
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            an = analytic[name].reshape(-1)[c]
            scaled = abs(fd - an) / (atol / rtol + abs(fd))
            worst = max(worst, scaled)
            if abs(fd - an) > atol + rtol * abs(fd):
                raise AssertionError(
                    f"gradcheck failed for {name}[{c}]: fd={fd:.12g} "
                    f"analytic={an:.12g} err={abs(fd - an):.3g}"
                )
        errors[name] = worst
    return errors
