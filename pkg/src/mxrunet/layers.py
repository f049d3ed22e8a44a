"""Layer vocabulary: modules with named parameters, mish, conv/bn
stacks, residual blocks with the averaged-pool downsample path,
sub-pixel upsampling with ICNR initialization, blur, and spatial
self-attention.

Modules register parameters (Tensor attributes) and child modules
automatically; buffers (plain arrays such as batch-norm running stats)
are registered explicitly.  Traversal order is attribute-assignment
order, which makes checkpoint name lists deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import (Tensor, avg_pool2d, batch_norm2d, concat_channels, conv2d,
                     matmul, max_pool2d, pad2d, reshape, softmax, softplus,
                     tanh, transpose)


def kaiming_normal(shape, rng, dtype=np.float32):
    """He-style normal init: std = sqrt(2 / fan_in), fan_in = prod(shape[1:])."""
    fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Module:
    """Base class with automatic parameter/child registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._children.pop(name, None)
            self._params[name] = value
        elif isinstance(value, Module):
            self._params.pop(name, None)
            self._children[name] = value
        else:
            self._params.pop(name, None)
            self._children.pop(name, None)
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grads(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag=True):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def train(self, mode=True):
        object.__setattr__(self, "training", bool(mode))
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Ordered child container; children register under their index."""

    def __init__(self, modules=()):
        super().__init__()
        self._order = []
        for m in modules:
            self.append(m)

    def append(self, module):
        name = str(len(self._order))
        self._order.append(name)
        setattr(self, name, module)
        return self

    def __iter__(self):
        return (self._children[n] for n in self._order)

    def __getitem__(self, i):
        return self._children[self._order[i]]

    def __len__(self):
        return len(self._order)


def mish(x):
    """x * tanh(softplus(x)); smooth, non-monotone, derivative 0.6 at 0."""
    return x * tanh(softplus(x))


class Conv2d(Module):
    """Cross-correlation layer; padding defaults to kernel // 2."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=None,
                 bias=True, rng=None, dtype=np.float32):
        super().__init__()
        if rng is None:
            raise ContractError("Conv2d needs an rng for weight init")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        shape = (out_channels, in_channels, kernel, kernel)
        self.weight = Tensor(kaiming_normal(shape, rng, dtype), requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, gamma_init=1.0,
                 dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.full(channels, gamma_init, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        # Norm affine params are excluded from weight decay.
        self.gamma.no_decay = True
        self.beta.no_decay = True
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x):
        return batch_norm2d(x, self.gamma, self.beta,
                            self.running_mean, self.running_var,
                            momentum=self.momentum, eps=self.eps,
                            training=self.training)


class ConvLayer(Module):
    """conv -> optional batch norm -> optional mish.

    The conv carries a bias only when batch norm is absent (bn's beta
    subsumes it otherwise).
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=None,
                 use_bn=True, activation="mish", zero_bn=False, rng=None,
                 dtype=np.float32):
        super().__init__()
        if activation not in ("mish", "none"):
            raise ContractError(f"unknown activation {activation!r}")
        self.conv = Conv2d(in_channels, out_channels, kernel, stride=stride,
                           pad=pad, bias=not use_bn, rng=rng, dtype=dtype)
        if use_bn:
            self.bn = BatchNorm2d(out_channels, gamma_init=0.0 if zero_bn else 1.0,
                                  dtype=dtype)
        else:
            object.__setattr__(self, "bn", None)
        self.activation = activation

    def forward(self, x):
        y = self.conv(x)
        if self.bn is not None:
            y = self.bn(y)
        if self.activation == "mish":
            y = mish(y)
        return y


# ---------------------------------------------------------------------------
# sub-pixel upsampling
# ---------------------------------------------------------------------------

def pixel_shuffle(x, r):
    """Rearrange (N, C*r^2, H, W) -> (N, C, r*H, r*W).

    Sub-pixel order is row-major: out[n, c, h*r+i, w*r+j] comes from
    input channel c*r^2 + i*r + j.
    """
    if r < 1:
        raise DimensionError(f"pixel_shuffle scale must be >= 1, got {r}")
    if x.ndim != 4:
        raise DimensionError(f"pixel_shuffle expects an NCHW tensor, got shape {x.shape}")
    N, C, H, W = x.shape
    if C % (r * r):
        raise DimensionError(f"channel count {C} not divisible by r^2 = {r * r}")
    if r == 1:
        return x
    c = C // (r * r)
    y = reshape(x, (N, c, r, r, H, W))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (N, c, H * r, W * r))


def pixel_unshuffle(x, r):
    """Inverse of pixel_shuffle; recovers the input bit-exactly."""
    if x.ndim != 4:
        raise DimensionError(f"pixel_unshuffle expects an NCHW tensor, got shape {x.shape}")
    N, C, H, W = x.shape
    if H % r or W % r:
        raise DimensionError(f"spatial size {H}x{W} not divisible by scale {r}")
    if r == 1:
        return x
    y = reshape(x, (N, C, H // r, r, W // r, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (N, C * r * r, H // r, W // r))


def icnr_init(c_out, c_in, k, r, base_init=kaiming_normal, rng=None,
              dtype=np.float32):
    """Sub-pixel conv weight of shape (c_out*r^2, c_in, k, k).

    Draw a base kernel (c_out, c_in, k, k) and replicate each base
    filter r^2 times into consecutive output slots, so conv followed by
    pixel_shuffle starts out as nearest-neighbor upsampling of the base
    conv's output.
    """
    if c_out < 1 or r < 1:
        raise DimensionError(f"icnr_init needs c_out, r >= 1, got {c_out}, {r}")
    base = base_init((c_out, c_in, k, k), rng, dtype)
    return Tensor(np.repeat(base, r * r, axis=0), requires_grad=True)


def blur(x):
    """Size-preserving 2x2 mean filter.

    Replication-pads one pixel on top and left, then averages 2x2
    windows at stride 1; constants pass through unchanged.
    """
    padded = pad2d(x, (1, 0, 1, 0), mode="replicate")
    return avg_pool2d(padded, 2, stride=1)


class PixelShuffleUpsampler(Module):
    """1x1 conv (ICNR, bias-free) -> pixel shuffle -> optional blur."""

    def __init__(self, in_channels, out_channels, scale=2, use_blur=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.scale = scale
        self.use_blur = use_blur
        self.weight = icnr_init(out_channels, in_channels, 1, scale, rng=rng,
                                dtype=dtype)

    def raw_upsample(self, x):
        """conv + shuffle with no blur; 2x2 blocks are constant at init."""
        return pixel_shuffle(conv2d(x, self.weight), self.scale)

    def forward(self, x):
        y = self.raw_upsample(x)
        return blur(y) if self.use_blur else y


# ---------------------------------------------------------------------------
# self-attention
# ---------------------------------------------------------------------------

class SelfAttention(Module):
    """Spatial self-attention gated by a scalar that starts at 0.

    Query/key projections reduce channels to C/8 (floored, min 1); the
    affinity between every pair of positions is softmax-normalized over
    key positions, so each output position's weights sum to 1.  With
    gamma = 0 the layer is the identity.
    """

    def __init__(self, channels, rng=None, dtype=np.float32):
        super().__init__()
        if channels < 1:
            raise DimensionError(f"self-attention needs >= 1 channel, got {channels}")
        reduced = max(channels // 8, 1)
        self.channels = channels
        self.reduced = reduced
        self.query = Tensor(kaiming_normal((reduced, channels, 1, 1), rng, dtype),
                            requires_grad=True)
        self.key = Tensor(kaiming_normal((reduced, channels, 1, 1), rng, dtype),
                          requires_grad=True)
        self.value = Tensor(kaiming_normal((channels, channels, 1, 1), rng, dtype),
                            requires_grad=True)
        self.gamma = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        self.gamma.no_decay = True

    def attention_map(self, x):
        """(N, L, L) affinities; rows index output positions, sum to 1."""
        N, C, H, W = x.shape
        L = H * W
        q = reshape(conv2d(x, self.query), (N, self.reduced, L))
        k = reshape(conv2d(x, self.key), (N, self.reduced, L))
        energy = matmul(transpose(q, (0, 2, 1)), k)
        return softmax(energy, axis=-1)

    def forward(self, x):
        N, C, H, W = x.shape
        if C != self.channels:
            raise DimensionError(
                f"self-attention built for {self.channels} channels, got {C}")
        L = H * W
        attn = self.attention_map(x)
        v = reshape(conv2d(x, self.value), (N, C, L))
        mixed = matmul(v, transpose(attn, (0, 2, 1)))
        return self.gamma * reshape(mixed, (N, C, H, W)) + x


# ---------------------------------------------------------------------------
# residual blocks and stem
# ---------------------------------------------------------------------------

class ResidualBlock(Module):
    """Basic or bottleneck residual block, mish after the residual add.

    The averaged-pool variant (pool_shortcut=True) downsamples the
    shortcut with a 2x2 average pool before the 1x1 projection instead
    of striding the projection itself; the plain variant strides the
    1x1 conv.  The last main-path bn starts at gamma = 0 so a fresh
    block is near-identity.
    """

    EXPANSION = {"basic": 1, "bottleneck": 4}

    def __init__(self, in_channels, out_channels, kind="basic", stride=1,
                 pool_shortcut=True, hidden=None, rng=None, dtype=np.float32):
        super().__init__()
        if kind not in self.EXPANSION:
            raise ContractError(f"unknown residual block kind {kind!r}")
        if stride not in (1, 2):
            raise ContractError(f"residual block stride must be 1 or 2, got {stride}")
        self.kind = kind
        self.stride = stride
        self.pool_shortcut = pool_shortcut
        kw = dict(rng=rng, dtype=dtype)
        if kind == "basic":
            self.convs = ModuleList([
                ConvLayer(in_channels, out_channels, 3, stride=stride, **kw),
                ConvLayer(out_channels, out_channels, 3, activation="none",
                          zero_bn=True, **kw),
            ])
        else:
            hidden = out_channels // 4 if hidden is None else hidden
            self.convs = ModuleList([
                ConvLayer(in_channels, hidden, 1, **kw),
                ConvLayer(hidden, hidden, 3, stride=stride, **kw),
                ConvLayer(hidden, out_channels, 1, activation="none",
                          zero_bn=True, **kw),
            ])
        if pool_shortcut:
            # pool handles the stride, so the projection never strides
            proj_stride = 1
        else:
            proj_stride = stride
        if in_channels != out_channels:
            self.shortcut = ConvLayer(in_channels, out_channels, 1,
                                      stride=proj_stride, activation="none", **kw)
        else:
            object.__setattr__(self, "shortcut", None)

    def forward(self, x):
        y = x
        for layer in self.convs:
            y = layer(y)
        s = x
        if self.stride == 2 and self.pool_shortcut:
            H, W = x.shape[2], x.shape[3]
            if H % 2 or W % 2:
                raise DimensionError(
                    f"downsampling shortcut needs even spatial size, got {H}x{W}")
            s = avg_pool2d(s, 2, stride=2)
        if self.shortcut is not None:
            s = self.shortcut(s)
        if y.shape != s.shape:
            raise DimensionError(
                f"residual add shape mismatch: main {y.shape} vs shortcut {s.shape}")
        return mish(y + s)


class Stem(Module):
    """Three 3x3 conv-bn-mish layers (first strided) then 3x3 max-pool.

    conv_out gives the 1/2-resolution activation before the pool; the
    full forward lands at 1/4 resolution.
    """

    def __init__(self, in_channels=3, widths=(32, 32, 64), rng=None,
                 dtype=np.float32):
        super().__init__()
        w0, w1, w2 = widths
        kw = dict(rng=rng, dtype=dtype)
        self.convs = ModuleList([
            ConvLayer(in_channels, w0, 3, stride=2, **kw),
            ConvLayer(w0, w1, 3, **kw),
            ConvLayer(w1, w2, 3, **kw),
        ])
        self.out_channels = w2

    def conv_out(self, x):
        H, W = x.shape[2], x.shape[3]
        if H < 8 or W < 8:
            raise DimensionError(f"stem needs input at least 8x8, got {H}x{W}")
        y = x
        for layer in self.convs:
            y = layer(y)
        return y

    def forward(self, x):
        return max_pool2d(self.conv_out(x), 3, stride=2, pad=1)


class DecoderBlock(Module):
    """Upsample 2x, join a skip connection, refine.

    The upsampler halves the incoming channel count; after
    concatenation two 3x3 conv-bn-mish layers keep the joint width.
    """

    def __init__(self, in_channels, skip_channels, use_blur=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        up_out = in_channels // 2
        if up_out < 1:
            raise DimensionError(f"decoder input too narrow: {in_channels} channels")
        self.upsample = PixelShuffleUpsampler(in_channels, up_out, scale=2,
                                              use_blur=use_blur, rng=rng, dtype=dtype)
        width = up_out + skip_channels
        self.out_channels = width
        kw = dict(rng=rng, dtype=dtype)
        self.convs = ModuleList([
            ConvLayer(width, width, 3, **kw),
            ConvLayer(width, width, 3, **kw),
        ])

    def forward(self, up_in, skip):
        uh, uw = up_in.shape[2], up_in.shape[3]
        sh, sw = skip.shape[2], skip.shape[3]
        if (sh, sw) != (2 * uh, 2 * uw):
            raise DimensionError(
                f"decoder expects skip at exactly twice the spatial size: "
                f"got up {uh}x{uw} vs skip {sh}x{sw} (no implicit cropping)")
        y = self.upsample(up_in)
        y = concat_channels([y, skip])
        for layer in self.convs:
            y = layer(y)
        return y
