"""Dense float64 tensors with the reverse-mode kernels the network needs.

Feature maps are laid out (N, C, T, H, W). Every op returns a new
:class:`Tensor` that remembers how to push its gradient back to its inputs;
calling :meth:`Tensor.backward` on a scalar walks that graph once.
"""
from __future__ import annotations

import io
import math
import struct
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise DimensionError(f"expected a (t, h, w) triple, got {v}")
    return v


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim and min(self.data.shape) < 1:
            raise DimensionError(f"empty extent in shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- convolution ---------------------------------------------------------

def _pool_windows(xp: np.ndarray, kernel, stride, dilation, out_ext) -> np.ndarray:
    """View of shape (N, C, To, Ho, Wo, kt, kh, kw) over an already padded input."""
    span = [d * (k - 1) + 1 for k, d in zip(kernel, dilation)]
    win = sliding_window_view(xp, span, axis=(2, 3, 4))
    win = win[:, :, ::stride[0], ::stride[1], ::stride[2], ::dilation[0], ::dilation[1], ::dilation[2]]
    return win[:, :, :out_ext[0], :out_ext[1], :out_ext[2]]


def conv_output_extent(n, k, s, p, d) -> int:
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def _check_conv(x: np.ndarray, w: np.ndarray, stride, padding, dilation):
    if x.ndim != 5:
        raise DimensionError(f"conv3d input must be (N, C, T, H, W), got shape {x.shape}")
    if w.ndim != 5:
        raise DimensionError(f"conv3d weight must be (C_out, C_in, kt, kh, kw), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"channel axis: input has {x.shape[1]}, weight expects {w.shape[1]}")
    out = []
    for axis, n, k, s, p, d in zip("THW", x.shape[2:], w.shape[2:], stride, padding, dilation):
        if s < 1 or d < 1 or p < 0:
            raise DimensionError(f"axis {axis}: stride/dilation must be positive and padding non-negative")
        e = conv_output_extent(n, k, s, p, d)
        if e < 1:
            raise DimensionError(f"axis {axis}: padded extent {n + 2 * p} smaller than dilated kernel {d * (k - 1) + 1}")
        out.append(e)
    return out


def _conv_plan(x: np.ndarray, w: np.ndarray, stride, padding, dilation):
    """Spatial im2col over every padded frame; the temporal taps are summed afterwards.

    Returns (padded input, cols of shape (C*kh*kw, N*Tp*Ho*Wo), output extents).
    """
    out_ext = _check_conv(x, w, stride, padding, dilation)
    N, C = x.shape[:2]
    kh, kw = w.shape[3:]
    _, Ho, Wo = out_ext
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    win = sliding_window_view(xp, (dilation[1] * (kh - 1) + 1, dilation[2] * (kw - 1) + 1), axis=(3, 4))
    win = win[:, :, :, ::stride[1], ::stride[2], ::dilation[1], ::dilation[2]][:, :, :, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(1, 5, 6, 0, 2, 3, 4)).reshape(C * kh * kw, -1)
    return xp, cols, out_ext


def _temporal_taps(Y: np.ndarray, kt: int, stride_t: int, dil_t: int, To: int) -> np.ndarray:
    # Y: (kt, O, N, Tp, Ho, Wo) -> (O, N, To, Ho, Wo)
    span = stride_t * (To - 1) + 1
    out = Y[0, :, :, 0:span:stride_t].copy()
    for a in range(1, kt):
        s = a * dil_t
        out += Y[a, :, :, s:s + span:stride_t]
    return out


def conv3d_forward(x: np.ndarray, w: np.ndarray, stride=1, padding=0, dilation=1) -> np.ndarray:
    stride, padding, dilation = _triple(stride), _triple(padding), _triple(dilation)
    xp, cols, (To, Ho, Wo) = _conv_plan(x, w, stride, padding, dilation)
    O, _, kt = w.shape[:3]
    Y = (w.transpose(2, 0, 1, 3, 4).reshape(kt * O, -1) @ cols).reshape(kt, O, x.shape[0], xp.shape[2], Ho, Wo)
    return np.ascontiguousarray(_temporal_taps(Y, kt, stride[0], dilation[0], To).transpose(1, 0, 2, 3, 4))


def conv3d_direct(x: np.ndarray, w: np.ndarray, stride=1, padding=0, dilation=1) -> np.ndarray:
    """Cross-correlation by explicit loops over output positions."""
    stride, padding, dilation = _triple(stride), _triple(padding), _triple(dilation)
    To, Ho, Wo = _check_conv(x, w, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    kt, kh, kw = w.shape[2:]
    dt, dh, dw = dilation
    out = np.zeros((x.shape[0], w.shape[0], To, Ho, Wo))
    for t in range(To):
        for i in range(Ho):
            for j in range(Wo):
                t0, i0, j0 = t * stride[0], i * stride[1], j * stride[2]
                patch = xp[:, :, t0:t0 + dt * (kt - 1) + 1:dt, i0:i0 + dh * (kh - 1) + 1:dh,
                           j0:j0 + dw * (kw - 1) + 1:dw]
                out[:, :, t, i, j] = np.einsum("ncabe,ocabe->no", patch, w)
    return out


def conv3d(x: Tensor, w: Tensor, stride=1, padding=0, dilation=1) -> Tensor:
    """3D cross-correlation of (N, C, T, H, W) input with (C_out, C_in, kt, kh, kw) weights."""
    stride, padding, dilation = _triple(stride), _triple(padding), _triple(dilation)
    xd, wd = x.data, w.data
    xp, cols, (To, Ho, Wo) = _conv_plan(xd, wd, stride, padding, dilation)
    O, C, kt, kh, kw = wd.shape
    N, Tp = xd.shape[0], xp.shape[2]
    Wm = wd.transpose(2, 0, 1, 3, 4).reshape(kt * O, C * kh * kw)
    Y = (Wm @ cols).reshape(kt, O, N, Tp, Ho, Wo)
    out = _temporal_taps(Y, kt, stride[0], dilation[0], To).transpose(1, 0, 2, 3, 4)
    span = stride[0] * (To - 1) + 1

    def backward(g):
        gY = np.zeros((kt, O, N, Tp, Ho, Wo))
        gt = g.transpose(1, 0, 2, 3, 4)
        for a in range(kt):
            s = a * dilation[0]
            gY[a, :, :, s:s + span:stride[0]] = gt
        gY = gY.reshape(kt * O, -1)
        gw = None
        if w.requires_grad:
            gw = (gY @ cols.T).reshape(kt, O, C, kh, kw).transpose(1, 2, 0, 3, 4)
        gx = None
        if x.requires_grad:
            gcols = (Wm.T @ gY).reshape(C, kh, kw, N, Tp, Ho, Wo)
            gxp = np.zeros((C, N) + xp.shape[2:])
            for b in range(kh):
                hb = b * dilation[1]
                for e in range(kw):
                    we = e * dilation[2]
                    gxp[:, :, :, hb:hb + stride[1] * (Ho - 1) + 1:stride[1],
                        we:we + stride[2] * (Wo - 1) + 1:stride[2]] += gcols[:, b, e]
            sl = tuple(slice(p, p + n) for p, n in zip(padding, xd.shape[2:]))
            gx = gxp.transpose(1, 0, 2, 3, 4)[(slice(None), slice(None)) + sl]
        return gx, gw

    return Tensor(np.ascontiguousarray(out), parents=(x, w), backward=backward)


# -- batch norm ----------------------------------------------------------

def batchnorm(x: Tensor, scale: Tensor, shift: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              mode: str = "train", momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over every axis but C.

    In train mode the running statistics are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    xd = x.data
    C = xd.shape[1] if xd.ndim >= 2 else -1
    if scale.data.shape != (C,) or shift.data.shape != (C,):
        raise DimensionError(f"channel axis: input has {C} channels, scale/shift have "
                             f"{scale.data.shape}/{shift.data.shape}")
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, C) + (1,) * (xd.ndim - 2)
    if mode == "train":
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    elif mode == "eval":
        mean, var = running_mean.copy(), running_var.copy()
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def backward(g):
        gscale = (g * xhat).sum(axis=axes)
        gshift = g.sum(axis=axes)
        gxhat = g * scale.data.reshape(bshape)
        if mode == "train":
            m = xd.size // C
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, gscale, gshift

    return Tensor(out, parents=(x, scale, shift), backward=backward)


# -- pooling, fc, activations --------------------------------------------

def maxpool3d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    kernel = _triple(kernel)
    stride = kernel if stride is None else _triple(stride)
    padding = _triple(padding)
    xd = x.data
    if xd.ndim != 5:
        raise DimensionError(f"maxpool3d input must be (N, C, T, H, W), got shape {xd.shape}")
    out_ext = []
    for axis, n, k, s, p in zip("THW", xd.shape[2:], kernel, stride, padding):
        e = conv_output_extent(n, k, s, p, 1)
        if e < 1:
            raise DimensionError(f"axis {axis}: extent {n} too small for pool kernel {k}")
        out_ext.append(e)
    xp = np.pad(xd, ((0, 0), (0, 0)) + tuple((p, p) for p in padding), constant_values=-np.inf)
    win = _pool_windows(xp, kernel, stride, (1, 1, 1), out_ext)
    flat = win.reshape(win.shape[:5] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros_like(xp)
        To, Ho, Wo = out_ext
        kt, kh, kw = kernel
        for idx in range(kt * kh * kw):
            a, rem = divmod(idx, kh * kw)
            b, e = divmod(rem, kw)
            gxp[:, :, a:a + stride[0] * (To - 1) + 1:stride[0],
                b:b + stride[1] * (Ho - 1) + 1:stride[1],
                e:e + stride[2] * (Wo - 1) + 1:stride[2]] += np.where(arg == idx, g, 0.0)
        sl = tuple(slice(p, p + n) for p, n in zip(padding, xd.shape[2:]))
        return (gxp[(slice(None), slice(None)) + sl],)

    return Tensor(out, parents=(x,), backward=backward)


def global_avgpool(x: Tensor) -> Tensor:
    """(N, C, ...) -> (N, C) mean over every trailing axis."""
    xd = x.data
    axes = tuple(range(2, xd.ndim))
    count = math.prod(xd.shape[2:])
    out = xd.mean(axis=axes)

    def backward(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)), xd.shape) / count,)

    return Tensor(out, parents=(x,), backward=backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise DimensionError(f"feature axis: input {xd.shape} incompatible with weight {wd.shape}")
    if bias.data.shape != (wd.shape[0],):
        raise DimensionError(f"bias shape {bias.data.shape} does not match {wd.shape[0]} outputs")
    out = xd @ wd.T + bias.data

    def backward(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return Tensor(out, parents=(x, weight, bias), backward=backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), parents=(x,), backward=lambda g: (g * mask,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, mode: str = "train") -> Tensor:
    """Inverted dropout; the drawn mask is captured so backward replays it."""
    if mode == "eval" or p == 0:
        return Tensor(x.data, parents=(x,), backward=lambda g: (g,))
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return Tensor(x.data * keep, parents=(x,), backward=lambda g: (g * keep,))


def softmax(x) -> np.ndarray | Tensor:
    """Row softmax over the last axis; accepts arrays or Tensors."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    if not isinstance(x, Tensor):
        return out

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor(out, parents=(x,), backward=backward)


def sigmoid(x) -> np.ndarray | Tensor:
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    if not isinstance(x, Tensor):
        return out
    return Tensor(out, parents=(x,), backward=lambda g: (g * out * (1 - out),))


def concat_channels(*xs: Tensor) -> Tensor:
    if len(xs) == 1 and isinstance(xs[0], (list, tuple)):
        xs = tuple(xs[0])
    ref = xs[0].data.shape
    for x in xs[1:]:
        if x.data.ndim != len(ref) or x.data.shape[:1] + x.data.shape[2:] != ref[:1] + ref[2:]:
            raise DimensionError(f"concat: shapes {ref} and {x.data.shape} differ off the channel axis")
    sizes = [x.data.shape[1] for x in xs]
    out = np.concatenate([x.data for x in xs], axis=1)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return Tensor(out, parents=tuple(xs), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    return Tensor(a.data + b.data, parents=(a, b), backward=lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise DimensionError(f"mul: shapes {ad.shape} and {bd.shape} differ")
    return Tensor(ad * bd, parents=(a, b), backward=lambda g: (g * bd, g * ad))


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    return Tensor(x.data.sum(), parents=(x,), backward=lambda g: (np.broadcast_to(g, shape).copy(),))


# -- lateral transforms --------------------------------------------------

def ttoc_array(x: np.ndarray, omega: int) -> np.ndarray:
    N, C, T, H, W = x.shape
    if T % omega:
        raise DimensionError(f"time axis: extent {T} not divisible by omega={omega}")
    # new channel index = frame_offset * C + c
    return x.reshape(N, C, T // omega, omega, H, W).transpose(0, 3, 1, 2, 4, 5).reshape(N, omega * C, T // omega, H, W)


def ttoc_inverse_array(y: np.ndarray, omega: int) -> np.ndarray:
    N, CO, T, H, W = y.shape
    if CO % omega:
        raise DimensionError(f"channel axis: extent {CO} not divisible by omega={omega}")
    C = CO // omega
    return y.reshape(N, omega, C, T, H, W).transpose(0, 2, 3, 1, 4, 5).reshape(N, C, T * omega, H, W)


def slice_reshape(x: Tensor, index: slice, shape) -> Tensor:
    """``x.data.reshape(-1)[index].reshape(shape)`` with gradient."""
    flat = x.data.reshape(-1)
    out = flat[index].reshape(shape)

    def backward(g):
        gx = np.zeros_like(flat)
        gx[index] = g.reshape(-1)
        return (gx.reshape(x.shape),)

    return Tensor(out, parents=(x,), backward=backward)


def reshape_ttoc(x: Tensor, omega: int) -> Tensor:
    """{omega*T, S^2, C} -> {T, S^2, omega*C}: each run of omega frames becomes channels."""
    out = ttoc_array(x.data, omega)
    return Tensor(out, parents=(x,), backward=lambda g: (ttoc_inverse_array(g, omega),))


def temporal_subsample(x: Tensor, omega: int) -> Tensor:
    xd = x.data
    if xd.shape[2] % omega:
        raise DimensionError(f"time axis: extent {xd.shape[2]} not divisible by omega={omega}")
    out = xd[:, :, ::omega].copy()

    def backward(g):
        gx = np.zeros_like(xd)
        gx[:, :, ::omega] = g
        return (gx,)

    return Tensor(out, parents=(x,), backward=backward)


def upsample_spatial(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour repeat of H and W by an integer factor."""
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=3).repeat(factor, axis=4)
    N, C, T, H, W = x.data.shape

    def backward(g):
        return (g.reshape(N, C, T, H, factor, W, factor).sum(axis=(4, 6)),)

    return Tensor(out, parents=(x,), backward=backward)


# -- losses --------------------------------------------------------------

def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    N, K = z.shape
    if labels.shape[0] != N:
        raise DimensionError(f"batch axis: {N} logit rows but {labels.shape[0]} labels")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise ValueError(f"label out of range [0, {K})")
    lse = _logsumexp(z)
    loss = float(np.mean(lse - z[np.arange(N), labels]))

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(N), labels] -= 1.0
        return (g * p / N,)

    return Tensor(loss, parents=(logits,), backward=backward)


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-class sigmoid cross-entropy, summed over classes and averaged over the batch."""
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise DimensionError(f"targets {y.shape} do not match logits {z.shape}")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("multi-label targets must be 0/1")
    N = z.shape[0]
    # log(1 + exp(-|z|)) + max(z, 0) - z*y
    per = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0) - z * y
    loss = float(per.sum() / N)

    def backward(g):
        return (g * (sigmoid(z) - y) / N,)

    return Tensor(loss, parents=(logits,), backward=backward)


# -- parameter store -----------------------------------------------------

class ParamStore:
    """Named parameter arrays plus BN running statistics."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None,
                 buffers: Mapping[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {k: np.asarray(v, dtype=np.float64) for k, v in (params or {}).items()}
        self.buffers: dict[str, np.ndarray] = {k: np.asarray(v, dtype=np.float64) for k, v in (buffers or {}).items()}

    def __getitem__(self, name):
        return self.params[name]

    def __setitem__(self, name, value):
        self.params[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()})

    def zeros_like(self) -> "ParamStore":
        return ParamStore({k: np.zeros_like(v) for k, v in self.params.items()})

    def num_values(self) -> int:
        return sum(v.size for v in self.params.values())

    def equals(self, other: "ParamStore") -> bool:
        if self.params.keys() != other.params.keys() or self.buffers.keys() != other.buffers.keys():
            return False
        return all(np.array_equal(v, other.params[k]) for k, v in self.params.items()) and all(
            np.array_equal(v, other.buffers[k]) for k, v in self.buffers.items())

    def validate(self):
        for k, v in self.buffers.items():
            if k.endswith("running_var") and np.any(v < 0):
                raise NumericError(f"negative running variance in {k}")

    # checkpoint format: magic 'SFCK', u32 version, u32 count, then per entry
    # u32 name length, utf-8 name, u32 rank, u64 extents, f64 payload; all little-endian.
    MAGIC = b"SFCK"
    VERSION = 1

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        entries = list(self.params.items()) + [("buffer:" + k, v) for k, v in self.buffers.items()]
        buf.write(self.MAGIC)
        buf.write(struct.pack("<II", self.VERSION, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamStore":
        if data[:4] != cls.MAGIC:
            raise ValueError("not an SFCK checkpoint")
        version, count = struct.unpack_from("<II", data, 4)
        if version != cls.VERSION:
            raise ValueError(f"unsupported SFCK version {version}")
        off = 12
        params, buffers = {}, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = math.prod(shape)
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
            if name.startswith("buffer:"):
                buffers[name[len("buffer:"):]] = arr
            else:
                params[name] = arr
        return cls(params, buffers)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# -- finite differences --------------------------------------------------

def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(forward: Callable[[Mapping[str, Tensor], Tensor], Tensor], params: ParamStore | Mapping,
                      input, epsilon: float = 1e-5, num_samples: int = 200,
                      rng: np.random.Generator | None = None, include_input: bool = True,
                      return_details: bool = False):
    """Max relative error between backprop gradients and central differences.

    ``forward(tensors, x)`` must build a scalar loss from a mapping of named
    parameter Tensors and an input Tensor, and must be deterministic (replay
    any dropout masks). Every parameter array gets at least one sampled
    coordinate; the rest of the budget is spread uniformly.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = {k: np.array(v, dtype=np.float64) for k, v in (params.items())}
    x = np.array(input.data if isinstance(input, Tensor) else input, dtype=np.float64)
    names = [k for k, v in arrays.items() if v.size]
    if include_input:
        names.append("<input>")
    if not names or num_samples < 1:
        raise ValueError("finite_diff_check needs at least one coordinate to sample")

    def evaluate():
        ts = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        xt = Tensor(x, requires_grad=include_input)
        loss = forward(ts, xt)
        val = float(loss.data)
        if not np.isfinite(val):
            raise NumericError("non-finite loss in finite_diff_check")
        return loss, ts, xt, val

    loss, ts, xt, _ = evaluate()
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in ts.items()}
    if include_input:
        grads["<input>"] = xt.grad if xt.grad is not None else np.zeros_like(x)
    target = {**arrays, "<input>": x}

    picks: list[tuple[str, int]] = []
    per = max(1, num_samples // len(names))
    for name in names:
        size = target[name].size
        for idx in rng.choice(size, size=min(per, size), replace=False):
            picks.append((name, int(idx)))
    while len(picks) < num_samples:
        name = names[int(rng.integers(len(names)))]
        picks.append((name, int(rng.integers(target[name].size))))

    worst = 0.0
    details = []
    for name, idx in picks:
        arr = target[name].reshape(-1)
        orig = arr[idx]
        arr[idx] = orig + epsilon
        fp = evaluate()[3]
        arr[idx] = orig - epsilon
        fm = evaluate()[3]
        arr[idx] = orig
        numeric = (fp - fm) / (2 * epsilon)
        analytic = float(grads[name].reshape(-1)[idx])
        err = relative_error(analytic, numeric)
        details.append((name, idx, analytic, numeric, err))
        worst = max(worst, err)
    return (worst, details) if return_details else worst
