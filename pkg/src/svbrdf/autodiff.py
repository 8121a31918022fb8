"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to train the estimation networks: a ``Tensor`` wrapping
an ndarray, a dynamic tape built from parent links and backward closures, and
the op set the generator/discriminators/losses actually use (convolutions,
instance norm, pointwise activations, reductions, channel concat/slice).

Conventions:
  * image tensors are NCHW;
  * ``backward()`` runs on scalars only and accumulates into ``.grad`` with
    ``+=`` so shared subgraphs are handled;
  * graph construction can be disabled with ``no_grad()`` for inference.

Convolutions are computed with strided window views plus ``np.tensordot``
(one BLAS GEMM per layer); the input gradient is itself expressed as a
dilated full correlation with spatially flipped kernels, so there is no
scatter loop anywhere.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True
_DEBUG_NAN = False


@contextmanager
def no_grad():
    """Disable graph construction inside the context (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_debug_nan(flag):
    """When enabled, every op asserts its output is finite (slow; for tests)."""
    global _DEBUG_NAN
    _DEBUG_NAN = bool(flag)


class Tensor:
    """An ndarray plus the tape links needed for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, (np.ndarray, np.generic)):
            self.data = np.asarray(data)  # keep the caller's float width
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------
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
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """A view of the same data with no tape links."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------
    def backward(self):
        """Reverse-mode sweep seeding d(self)/d(self) = 1; ``self`` must be scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic (same-shape tensors or python scalars) -----------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other)
            out = _node(self.data + other.data, (self, other))
            if out._parents:
                def bw(g):
                    _acc(self, g)
                    _acc(other, g)
                out._backward = bw
            return out
        out = _node(self.data + float(other), (self,))
        if out._parents:
            out._backward = lambda g: _acc(self, g)
        return out

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other)
            out = _node(self.data * other.data, (self, other))
            if out._parents:
                def bw(g):
                    _acc(self, g * other.data)
                    _acc(other, g * self.data)
                out._backward = bw
            return out
        c = float(other)
        out = _node(self.data * c, (self,))
        if out._parents:
            out._backward = lambda g: _acc(self, g * c)
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return self * (1.0 / float(other))


def constant(data):
    """Leaf tensor that never receives gradient."""
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=False)


def parameter(data):
    """Trainable leaf tensor."""
    return Tensor(np.ascontiguousarray(data, dtype=np.float32), requires_grad=True)


def _check_same_shape(a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape} (no implicit broadcasting)")


def _node(data, parents):
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if _DEBUG_NAN and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite op output")
    t = Tensor(data, requires_grad=requires)
    if requires:
        t._parents = tuple(parents)
    return t


def _acc(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _toposort(root):
    order = []
    state = {}  # id -> 1 in progress, 2 done
    stack = [(root, iter(root._parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            sid = state.get(id(p))
            if sid == 1:
                raise RuntimeError("cycle detected in autodiff graph")
            if sid is None and p.requires_grad:
                state[id(p)] = 1
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            state[id(node)] = 2
            order.append(node)
            stack.pop()
    return order


def custom_op(data, parents, backward):
    """Insert an externally computed op into the graph.

    ``backward(g)`` receives the output cotangent and must accumulate into the
    parents itself via :func:`accumulate_grad`.
    """
    out = _node(data, parents)
    if out._parents:
        out._backward = backward
    return out


def accumulate_grad(tensor, grad):
    """Public accumulation hook for :func:`custom_op` backward closures."""
    _acc(tensor, grad)


# --------------------------------------------------------------------------
# pointwise ops
# --------------------------------------------------------------------------

def relu(x):
    out = _node(np.maximum(x.data, 0.0), (x,))
    if out._parents:
        mask = x.data > 0.0
        out._backward = lambda g: _acc(x, g * mask)
    return out


def leaky_relu(x, slope=0.2):
    out = _node(np.where(x.data > 0.0, x.data, slope * x.data), (x,))
    if out._parents:
        scale = np.where(x.data > 0.0, 1.0, slope).astype(x.data.dtype)
        out._backward = lambda g: _acc(x, g * scale)
    return out


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = _node(y, (x,))
    if out._parents:
        out._backward = lambda g: _acc(x, g * y * (1.0 - y))
    return out


def tanh(x):
    y = np.tanh(x.data)
    out = _node(y, (x,))
    if out._parents:
        out._backward = lambda g: _acc(x, g * (1.0 - y * y))
    return out


def square(x):
    out = _node(x.data * x.data, (x,))
    if out._parents:
        out._backward = lambda g: _acc(x, g * 2.0 * x.data)
    return out


def absolute(x):
    out = _node(np.abs(x.data), (x,))
    if out._parents:
        sign = np.sign(x.data)
        out._backward = lambda g: _acc(x, g * sign)
    return out


def log(x):
    if x.data.min() <= 0.0:
        raise ValueError("log requires strictly positive input")
    out = _node(np.log(x.data), (x,))
    if out._parents:
        out._backward = lambda g: _acc(x, g / x.data)
    return out


ACOS_EPS = 1e-7


def acos(x):
    """Arc cosine with the argument clamped to +-(1 - 1e-7).

    Where the clamp engages the derivative is zero (the clamp is flat), which
    keeps angular losses finite for exactly aligned unit vectors.
    """
    clamped = np.clip(x.data, -1.0 + ACOS_EPS, 1.0 - ACOS_EPS)
    out = _node(np.arccos(clamped), (x,))
    if out._parents:
        interior = np.abs(x.data) < 1.0 - ACOS_EPS
        deriv = np.where(interior, -1.0 / np.sqrt(1.0 - clamped * clamped), 0.0)
        out._backward = lambda g: _acc(x, g * deriv)
    return out


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------

def reduce_sum(x, axis=None, keepdims=False):
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    out = _node(out_data, (x,))
    if out._parents:
        def bw(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _acc(x, np.broadcast_to(gg, x.data.shape))
        out._backward = bw
    return out


def reduce_mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod([x.data.shape[a] for a in np.atleast_1d(axis)])
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def concat(tensors, axis=1):
    tensors = list(tensors)
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(a, b)
                _acc(t, g[tuple(sl)])
        out._backward = bw
    return out


def narrow(x, axis, start, size):
    """Contiguous slice along one axis (inverse of concat)."""
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + size)
    sl = tuple(sl)
    out = _node(x.data[sl], (x,))
    if out._parents:
        def bw(g):
            full = np.zeros_like(x.data)
            full[sl] = g
            _acc(x, full)
        out._backward = bw
    return out


def resize_half(x):
    """2x box downsample of an NCHW tensor (H and W must be even)."""
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"resize_half needs even spatial dims, got {h}x{w}")
    y = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = _node(y, (x,))
    if out._parents:
        def bw(g):
            up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
            _acc(x, up)
        out._backward = bw
    return out


def normalize_channels(x, eps=1e-8):
    """L2-normalize along the channel axis of an NCHW tensor."""
    nrm = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True) + eps)
    y = x.data / nrm
    out = _node(y, (x,))
    if out._parents:
        def bw(g):
            dot = np.sum(g * x.data, axis=1, keepdims=True)
            _acc(x, g / nrm - x.data * (dot / nrm ** 3))
        out._backward = bw
    return out


# --------------------------------------------------------------------------
# padding
# --------------------------------------------------------------------------

def pad2d(x, pad, mode="zero"):
    """Spatial padding of an NCHW tensor.

    Args:
        pad: (top, bottom, left, right) or a single int for all four sides.
        mode: "zero" or "reflect" (edge pixels are not repeated).
    """
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    pt, pb, pl, pr = pad
    if min(pad) < 0:
        raise ValueError("negative padding")
    if pt == pb == pl == pr == 0:
        return x
    np_mode = {"zero": "constant", "reflect": "reflect"}[mode]
    h, w = x.data.shape[2:]
    if mode == "reflect" and (max(pt, pb) > h - 1 or max(pl, pr) > w - 1):
        raise ValueError("reflect padding wider than the image")
    y = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode=np_mode)
    out = _node(y, (x,))
    if not out._parents:
        return out

    def bw(g):
        core = np.array(g[:, :, pt:pt + h, pl:pl + w], copy=True)
        if mode == "reflect":
            # fold the padded rows/columns back onto their source texels
            for i in range(pt):
                core[:, :, pt - i, :] += g[:, :, i, pl:pl + w]
            for i in range(pb):
                core[:, :, h - 2 - i, :] += g[:, :, pt + h + i, pl:pl + w]
            for j in range(pl):
                core[:, :, :, pl - j] += g[:, :, pt:pt + h, j]
            for j in range(pr):
                core[:, :, :, w - 2 - j] += g[:, :, pt:pt + h, pl + w + j]
            # corners reflect twice (once per axis)
            for i in range(pt):
                for j in range(pl):
                    core[:, :, pt - i, pl - j] += g[:, :, i, j]
                for j in range(pr):
                    core[:, :, pt - i, w - 2 - j] += g[:, :, i, pl + w + j]
            for i in range(pb):
                for j in range(pl):
                    core[:, :, h - 2 - i, pl - j] += g[:, :, pt + h + i, j]
                for j in range(pr):
                    core[:, :, h - 2 - i, w - 2 - j] += g[:, :, pt + h + i, pl + w + j]
        _acc(x, core)

    out._backward = bw
    return out


# --------------------------------------------------------------------------
# convolutions
# --------------------------------------------------------------------------

def _windows(a, k, stride):
    """Strided view (B, C, OH, OW, k, k) over an NCHW array, no copy."""
    b, c, h, w = a.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    sb, sc, sh, sw = a.strides
    return np.lib.stride_tricks.as_strided(
        a, (b, c, oh, ow, k, k), (sb, sc, sh * stride, sw * stride, sh, sw), writeable=False)


def _corr_valid(a, weight, stride):
    """Valid cross-correlation: a (B,Ci,H,W) with weight (Co,Ci,k,k)."""
    win = _windows(a, weight.shape[2], stride)
    y = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _dilate(a, stride):
    if stride == 1:
        return a
    b, c, h, w = a.shape
    out = np.zeros((b, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=a.dtype)
    out[:, :, ::stride, ::stride] = a
    return out


def _corr_full(a, weight):
    """Full cross-correlation via zero padding to k-1 on each side."""
    k = weight.shape[2]
    ap = np.pad(a, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    return _corr_valid(ap, weight, 1)


def conv2d(x, weight, bias=None, stride=1, pad=0, pad_mode="zero"):
    """2D convolution (cross-correlation) over NCHW input.

    Args:
        weight: Tensor (C_out, C_in, k, k).
        bias: optional Tensor (C_out,).
        pad: int or (top, bottom, left, right); applied before the conv with
            ``pad_mode`` ("zero" or "reflect") as a separate differentiable op.
    """
    xp = pad2d(x, pad, mode=pad_mode) if (pad if isinstance(pad, int) else max(pad)) else x
    k = weight.data.shape[2]
    if xp.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"channel mismatch: input {xp.data.shape[1]}, weight {weight.data.shape[1]}")
    if xp.data.shape[2] < k or xp.data.shape[3] < k:
        raise ValueError(f"input {xp.data.shape[2:]} smaller than kernel {k}")
    y = _corr_valid(xp.data, weight.data, stride)
    if bias is not None:
        y = y + bias.data[:, None, None]
    parents = (xp, weight) if bias is None else (xp, weight, bias)
    out = _node(y, parents)
    if not out._parents:
        return out

    def bw(g):
        g = np.ascontiguousarray(g)
        if weight.requires_grad:
            win = _windows(xp.data, k, stride)
            oh, ow = g.shape[2], g.shape[3]
            dw = np.tensordot(g, win[:, :, :oh, :ow], axes=([0, 2, 3], [0, 2, 3]))
            _acc(weight, dw)
        if bias is not None and bias.requires_grad:
            _acc(bias, g.sum(axis=(0, 2, 3)))
        if xp.requires_grad:
            w_flip = weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            core = _corr_full(_dilate(g, stride), w_flip)
            hp, wp = xp.data.shape[2], xp.data.shape[3]
            dx = np.zeros_like(xp.data)
            ch, cw = core.shape[2], core.shape[3]
            dx[:, :, :min(ch, hp), :min(cw, wp)] = core[:, :, :hp, :wp]
            _acc(xp, dx)

    out._backward = bw
    return out


def conv2d_transpose(x, weight, bias=None, stride=2):
    """Fractionally-strided convolution that exactly doubles H and W.

    Args:
        weight: Tensor (C_in, C_out, k, k); k must be odd (3 in the networks).

    The output is the adjoint of a stride-2 SAME convolution, i.e. output
    pixel (2i, 2j) aligns with input pixel (i, j).
    """
    if stride != 2:
        raise ValueError("only stride 2 is supported")
    k = weight.data.shape[2]
    b, ci, h, w = x.data.shape
    if ci != weight.data.shape[0]:
        raise ValueError(f"channel mismatch: input {ci}, weight {weight.data.shape[0]}")
    w_flip = weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]  # (Co, Ci, k, k)
    core = _corr_full(_dilate(x.data, 2), w_flip)
    y = np.ascontiguousarray(core[:, :, :2 * h, :2 * w])
    if bias is not None:
        y = y + bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _node(y, parents)
    if not out._parents:
        return out

    def bw(g):
        # adjoint of the adjoint: a stride-2 correlation of the padded cotangent
        gp = np.pad(g, ((0, 0), (0, 0), (0, k - 2), (0, k - 2)))
        if x.requires_grad:
            win = _windows(gp, k, 2)
            dx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3]))
            _acc(x, np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))
        if weight.requires_grad:
            win = _windows(gp, k, 2)
            dw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
            _acc(weight, dw)
        if bias is not None and bias.requires_grad:
            _acc(bias, g.sum(axis=(0, 2, 3)))

    out._backward = bw
    return out


def instance_norm(x, gamma, beta, eps=1e-5):
    """Instance normalization over each (sample, channel) spatial slice."""
    b, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("gamma/beta must have shape (C,)")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data[:, None, None] + beta.data[:, None, None]
    out = _node(y, (x, gamma, beta))
    if not out._parents:
        return out

    def bw(g):
        if gamma.requires_grad:
            _acc(gamma, np.sum(g * xhat, axis=(0, 2, 3)))
        if beta.requires_grad:
            _acc(beta, np.sum(g, axis=(0, 2, 3)))
        if x.requires_grad:
            n = h * w
            dxhat = g * gamma.data[:, None, None]
            t1 = dxhat.sum(axis=(2, 3), keepdims=True)
            t2 = np.sum(dxhat * xhat, axis=(2, 3), keepdims=True)
            _acc(x, (inv / n) * (n * dxhat - t1 - xhat * t2))

    out._backward = bw
    return out


# --------------------------------------------------------------------------
# checkpoint serialization
# --------------------------------------------------------------------------

CKPT_MAGIC = b"SVCK"
CKPT_VERSION = 1


def save_checkpoint(path, named_arrays):
    """Write an ordered name->float32-array mapping to a binary checkpoint.

    Layout: magic, version, count, then per entry a length-prefixed UTF-8
    name, ndim, dims, and finally all payloads concatenated as little-endian
    float32 in entry order.
    """
    items = list(named_arrays.items())
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            arr = np.asarray(arr)
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for _, arr in items:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`; returns dict."""
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", f.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            entries.append((name, shape))
        out = {}
        for name, shape in entries:
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise ValueError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        extra = f.read(1)
        if extra:
            raise ValueError(f"{path}: trailing bytes after payload")
    return out
