"""Dense float tensors with reverse-mode automatic differentiation.

Data lives in numpy arrays (float32 for speed, float64 for gradient
checks); images follow the NCHW layout.  Each differentiable op records
its inputs and a backward closure on the output tensor, so calling
``backward()`` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients (``+=``) into every
reachable leaf that has ``requires_grad`` set.

Heavy ops (conv2d, pooling) are phrased as a handful of 2-D BLAS
matmuls per kernel offset: this keeps single-core inference fast
without an im2col memory blow-up.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericsError

_FLOAT_DTYPES = (np.float32, np.float64)

# Global autograd switches.  `no_grad` turns graph recording off (eval /
# benchmarking); `nan_guard` makes every forward op raise on non-finite
# outputs instead of propagating them (off by default for speed).
_grad_enabled = True
_nan_guard = False


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class nan_guard:
    """Context manager that checks every op output for NaN/Inf."""

    def __init__(self, enabled=True):
        self._enabled = enabled

    def __enter__(self):
        global _nan_guard
        self._prev = _nan_guard
        _nan_guard = self._enabled
        return self

    def __exit__(self, *exc):
        global _nan_guard
        _nan_guard = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-d float array plus an optional node in the gradient graph."""

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- arithmetic sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not part of the op set; divide by scalars")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def abs(self):
        return absolute(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def softplus(self):
        return softplus(self)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad}, op={self._op!r})"


def tensor(data, dtype=None, requires_grad=False):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def _coerce(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _check_same_dtype(a, b, op):
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: dtype mismatch {a.data.dtype.name} vs {b.data.dtype.name}")


def _make(data, parents, backward_fn, op):
    """Wrap an op result, recording the graph node when autograd is live."""
    if _nan_guard and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op {op!r}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents),
                      _backward=backward_fn, _op=op)
    return Tensor(data)


def _accum(t, g):
    # Always copy on first touch: g may alias a consumer's grad buffer.
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Run reverse-mode differentiation from a scalar loss.

    Visits each recorded node exactly once, after all of its consumers,
    and accumulates (+=) into every reachable ``requires_grad`` leaf.
    Unreachable leaves are left untouched.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    # Iterative topological sort (graphs can be deeper than the recursion limit).
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------

def add(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "add")
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw, "add")


def sub(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "sub")
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw, "sub")


def mul(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "mul")
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw, "mul")


def neg(a):
    def bw(g):
        if a.requires_grad:
            _accum(a, -g)

    return _make(-a.data, (a,), bw, "neg")


def tanh(a):
    y = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), bw, "tanh")


def softplus(a):
    # log(1 + exp(x)) computed overflow-safe; for large x this is ~x.
    y = np.logaddexp(np.array(0, dtype=a.dtype), a.data)

    def bw(g):
        # d/dx softplus = sigmoid(x) = exp(-softplus(-x)), overflow-safe.
        sig = np.exp(-np.logaddexp(np.array(0, dtype=a.dtype), -a.data))
        if a.requires_grad:
            _accum(a, g * sig)

    return _make(y, (a,), bw, "softplus")


def exp(a):
    y = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * y)

    return _make(y, (a,), bw, "exp")


def log(a):
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    y = np.log(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(y, (a,), bw, "log")


def relu(a):
    y = np.maximum(a.data, 0)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0))

    return _make(y, (a,), bw, "relu")


def absolute(a):
    y = np.abs(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * np.sign(a.data))

    return _make(y, (a,), bw, "abs")


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None):
    axis = _norm_axis(axis, a.ndim)
    y = a.data.sum(axis=axis)

    def bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            shape = [1 if i in axis else n for i, n in enumerate(a.data.shape)]
            _accum(a, np.broadcast_to(g.reshape(shape), a.data.shape))

    return _make(y, (a,), bw, "sum")


def tensor_mean(a, axis=None):
    axis = _norm_axis(axis, a.ndim)
    y = a.data.mean(axis=axis)
    if axis is None:
        count = a.data.size
    else:
        count = 1
        for ax in axis:
            count *= a.data.shape[ax]

    def bw(g):
        if not a.requires_grad:
            return
        scale = np.asarray(1.0 / count, dtype=a.dtype)
        if axis is None:
            _accum(a, np.broadcast_to(g * scale, a.data.shape))
        else:
            shape = [1 if i in axis else n for i, n in enumerate(a.data.shape)]
            _accum(a, np.broadcast_to((g * scale).reshape(shape), a.data.shape))

    return _make(y, (a,), bw, "mean")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    y = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _make(y, (a,), bw, "reshape")


def transpose(a, axes):
    axes = tuple(axes)
    y = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        if a.requires_grad:
            _accum(a, np.transpose(g, inverse))

    return _make(y, (a,), bw, "transpose")


def concat_channels(xs):
    """Concatenate NCHW tensors along the channel axis, in argument order."""
    if len(xs) == 0:
        raise DimensionError("concat_channels needs at least one input")
    first = xs[0]
    for i, x in enumerate(xs):
        if x.ndim != 4:
            raise DimensionError(f"concat_channels input {i} is not 4-d: shape {x.shape}")
        if x.shape[0] != first.shape[0] or x.shape[2:] != first.shape[2:]:
            raise DimensionError(
                f"concat_channels input {i} has shape {x.shape}, "
                f"incompatible with input 0 of shape {first.shape}")
        _check_same_dtype(first, x, "concat_channels")
    y = np.concatenate([x.data for x in xs], axis=1)
    offsets = np.cumsum([0] + [x.shape[1] for x in xs])

    def bw(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if x.requires_grad:
                _accum(x, g[:, lo:hi])

    return _make(y, tuple(xs), bw, "concat_channels")


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def _contig(a):
    return np.ascontiguousarray(a)


def matmul(a, b):
    """Batched matrix product; leading dims broadcast, inner dims must agree."""
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    # ascontiguousarray keeps numpy on its BLAS fast path.
    y = np.matmul(_contig(a.data), _contig(b.data))

    def bw(g):
        if a.requires_grad:
            da = np.matmul(_contig(g), _contig(np.swapaxes(b.data, -1, -2)))
            _accum(a, _unbroadcast(da, a.data.shape))
        if b.requires_grad:
            db = np.matmul(_contig(np.swapaxes(a.data, -1, -2)), _contig(g))
            _accum(b, _unbroadcast(db, b.data.shape))

    return _make(y, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(a, y * (g - dot))

    return _make(y, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# padding
# ---------------------------------------------------------------------------

_PAD_MODES = {"zero": "constant", "replicate": "edge", "reflect": "reflect"}


def _pad_tuple(pad):
    """Normalize a padding argument to (top, bottom, left, right)."""
    if isinstance(pad, int):
        return (pad, pad, pad, pad)
    pad = tuple(int(p) for p in pad)
    if len(pad) != 4:
        raise DimensionError(f"pad must be an int or 4-tuple (top,bottom,left,right), got {pad}")
    return pad


def pad2d(x, pad, mode="zero"):
    """Pad the last two axes of an NCHW tensor."""
    if mode not in _PAD_MODES:
        raise ContractError(f"unknown pad mode {mode!r}")
    top, bottom, left, right = _pad_tuple(pad)
    if min(top, bottom, left, right) < 0:
        raise DimensionError("negative padding is not supported")
    if top == bottom == left == right == 0:
        return x
    if x.ndim != 4:
        raise DimensionError(f"pad2d expects an NCHW tensor, got shape {x.shape}")
    width = ((0, 0), (0, 0), (top, bottom), (left, right))
    y = np.pad(x.data, width, mode=_PAD_MODES[mode])
    H, W = x.shape[2], x.shape[3]

    if mode == "zero":
        def bw(g):
            if x.requires_grad:
                _accum(x, g[:, :, top:top + H, left:left + W])
    else:
        # Row/col index maps padded position -> source position; np.pad on an
        # index vector gives exactly the gather map the forward used.
        iy = np.pad(np.arange(H), (top, bottom), mode=_PAD_MODES[mode])
        ix = np.pad(np.arange(W), (left, right), mode=_PAD_MODES[mode])

        def bw(g):
            if x.requires_grad:
                dx = np.zeros_like(x.data)
                np.add.at(dx, (slice(None), slice(None), iy[:, None], ix[None, :]), g)
                _accum(x, dx)

    return _make(y, (x,), bw, "pad2d")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _out_extent(n, k, stride):
    return (n - k) // stride + 1


def _offset_slice(i, k, stride, out_n):
    return slice(i, i + (out_n - 1) * stride + 1, stride)


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-d cross-correlation (no kernel flip) with zero padding.

    x: (N, Ci, H, W); w: (Co, Ci, kh, kw); b: optional (Co,).
    Output spatial size is floor((H + 2*pad - kh)/stride) + 1.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d x and w, got {x.shape} and {w.shape}")
    _check_same_dtype(x, w, "conv2d")
    N, Ci, H, W = x.shape
    Co, Ciw, kh, kw = w.shape
    if Ci != Ciw:
        raise DimensionError(
            f"conv2d channel mismatch: input shape {x.shape} vs weight shape {w.shape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    if H + 2 * pad < kh or W + 2 * pad < kw:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{H + 2 * pad}x{W + 2 * pad} (input shape {x.shape})")
    if b is not None:
        _check_same_dtype(x, b, "conv2d")
        if b.shape != (Co,):
            raise DimensionError(f"conv2d bias shape {b.shape} does not match {Co} filters")

    Ho = _out_extent(H + 2 * pad, kh, stride)
    Wo = _out_extent(W + 2 * pad, kw, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    L = Ho * Wo

    # One 2-D sgemm per kernel offset, in (C, N*L) column layout.
    acc = np.zeros((Co, N * L), dtype=x.data.dtype)
    for i in range(kh):
        si = _offset_slice(i, kh, stride, Ho)
        for j in range(kw):
            sj = _offset_slice(j, kw, stride, Wo)
            cols = _contig(xp[:, :, si, sj].transpose(1, 0, 2, 3)).reshape(Ci, N * L)
            acc += np.dot(_contig(w.data[:, :, i, j]), cols)
    out = acc.reshape(Co, N, Ho, Wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, Co, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gT = _contig(g.transpose(1, 0, 2, 3)).reshape(Co, N * L)
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for i in range(kh):
                si = _offset_slice(i, kh, stride, Ho)
                for j in range(kw):
                    sj = _offset_slice(j, kw, stride, Wo)
                    cols = _contig(xp[:, :, si, sj].transpose(1, 0, 2, 3)).reshape(Ci, N * L)
                    dw[:, :, i, j] = np.dot(gT, cols.T)
            _accum(w, dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                si = _offset_slice(i, kh, stride, Ho)
                for j in range(kw):
                    sj = _offset_slice(j, kw, stride, Wo)
                    part = np.dot(_contig(w.data[:, :, i, j]).T, gT)
                    dxp[:, :, si, sj] += part.reshape(Ci, N, Ho, Wo).transpose(1, 0, 2, 3)
            dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
            _accum(x, dx)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))

    return _make(out, parents, bw, "conv2d")


def avg_pool2d(x, kernel, stride=None, pad_mode="zero", pad=0):
    """Mean over kernel x kernel windows; optional padding applied first."""
    stride = kernel if stride is None else stride
    if kernel < 1 or stride < 1:
        raise ContractError(f"avg_pool2d needs kernel and stride >= 1, got {kernel}, {stride}")
    xpad = pad2d(x, pad, mode=pad_mode)
    N, C, H, W = xpad.shape
    if H < kernel or W < kernel:
        raise DimensionError(
            f"avg_pool2d window {kernel}x{kernel} larger than padded input {H}x{W}")
    return _pool_avg_core(xpad, kernel, stride)


def _pool_avg_core(x, k, stride):
    N, C, H, W = x.shape
    Ho = _out_extent(H, k, stride)
    Wo = _out_extent(W, k, stride)
    acc = np.zeros((N, C, Ho, Wo), dtype=x.data.dtype)
    for i in range(k):
        si = _offset_slice(i, k, stride, Ho)
        for j in range(k):
            sj = _offset_slice(j, k, stride, Wo)
            acc += x.data[:, :, si, sj]
    inv = np.asarray(1.0 / (k * k), dtype=x.data.dtype)
    out = acc * inv

    def bw(g):
        if not x.requires_grad:
            return
        gk = g * inv
        dx = np.zeros_like(x.data)
        for i in range(k):
            si = _offset_slice(i, k, stride, Ho)
            for j in range(k):
                sj = _offset_slice(j, k, stride, Wo)
                dx[:, :, si, sj] += gk
        _accum(x, dx)

    return _make(out, (x,), bw, "avg_pool2d")


def max_pool2d(x, kernel, stride=None, pad=0):
    """Max over kernel x kernel windows; zero padding is treated as -inf."""
    stride = kernel if stride is None else stride
    if kernel < 1 or stride < 1:
        raise ContractError(f"max_pool2d needs kernel and stride >= 1, got {kernel}, {stride}")
    N, C, H, W = x.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < kernel or Wp < kernel:
        raise DimensionError(
            f"max_pool2d window {kernel}x{kernel} larger than padded input {Hp}x{Wp}")
    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    Ho = _out_extent(Hp, kernel, stride)
    Wo = _out_extent(Wp, kernel, stride)
    out = None
    arg = None
    for idx in range(kernel * kernel):
        i, j = divmod(idx, kernel)
        si = _offset_slice(i, kernel, stride, Ho)
        sj = _offset_slice(j, kernel, stride, Wo)
        window = xp[:, :, si, sj]
        if out is None:
            out = np.array(window)
            arg = np.zeros(out.shape, dtype=np.int16)
        else:
            better = window > out
            out[better] = window[better]
            arg[better] = idx

    def bw(g):
        if not x.requires_grad:
            return
        dxp = np.zeros_like(xp)
        for idx in range(kernel * kernel):
            i, j = divmod(idx, kernel)
            si = _offset_slice(i, kernel, stride, Ho)
            sj = _offset_slice(j, kernel, stride, Wo)
            # Within one offset each output hits a distinct input: plain += works.
            dxp[:, :, si, sj] += np.where(arg == idx, g, 0)
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        _accum(x, dx)

    return _make(out, (x,), bw, "max_pool2d")


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def batch_norm2d(x, gamma, beta, running_mean, running_var,
                 momentum=0.1, eps=1e-5, training=True):
    """Per-channel batch normalization over an NCHW tensor.

    Train mode normalizes by batch statistics (biased variance) and
    updates the running buffers in place; eval mode uses the running
    buffers only.  Gradients flow to x, gamma and beta.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm2d expects an NCHW tensor, got shape {x.shape}")
    if eps <= 0:
        raise ContractError(f"batch_norm2d needs eps > 0, got {eps}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(
            f"batch_norm2d affine shapes {gamma.shape}/{beta.shape} do not match {C} channels")
    axes = (0, 2, 3)
    dt = x.data.dtype

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
    else:
        mu = running_mean.astype(dt, copy=False)
        var = running_var.astype(dt, copy=False)

    inv = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (x.data - mu.reshape(1, C, 1, 1).astype(dt)) * inv.reshape(1, C, 1, 1)
    out = gamma.data.reshape(1, C, 1, 1) * xhat + beta.data.reshape(1, C, 1, 1)

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        scale = (gamma.data * inv).reshape(1, C, 1, 1)
        if training:
            gm = g.mean(axis=axes).reshape(1, C, 1, 1)
            gxm = (g * xhat).mean(axis=axes).reshape(1, C, 1, 1)
            _accum(x, scale * (g - gm - xhat * gxm))
        else:
            _accum(x, scale * g)

    return _make(out, (x, gamma, beta), bw, "batch_norm2d")


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function, element by element.

    The independent oracle for every gradient test: (f(x + h*e_i) -
    f(x - h*e_i)) / 2h per element.  ``f`` must be deterministic; use
    float64 inputs for meaningful comparisons.
    """
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat_g = grad.reshape(-1)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(Tensor(base.copy())))
        flat[i] = orig - h
        fm = _scalar(f(Tensor(base.copy())))
        flat[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad)


def _scalar(v):
    if isinstance(v, Tensor):
        if v.data.size != 1:
            raise ContractError("finite_diff_grad needs a scalar-valued function")
        return float(v.data.reshape(-1)[0])
    return float(v)
