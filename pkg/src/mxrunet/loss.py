"""Three-term perceptual training loss.

A frozen VGG16-shaped stack turns 31-band cubes into feature maps
tapped just before its second, third and fourth max-pools; the loss is
a weighted sum of mean-L1 feature distances, mean-L1 Gram (style)
distances, and a mean squared pixel term.  Pretrained weights can be
loaded from a checkpoint; the default is seeded-random frozen weights,
which still define a valid differentiable loss for tests and smoke
runs without any external download.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import Conv2d, Module, ModuleList
from .tensor import (Tensor, absolute, matmul, max_pool2d, relu, reshape,
                     tensor_mean, transpose)

# 13 convs in 5 groups, max-pool after each group
_VGG_PLAN = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


def adapt_input_layer(w3, out_channels=31):
    """Widen a 3-channel first-layer conv weight to out_channels.

    Destination input channel c receives a copy of source channel
    c mod 3; no rescaling is applied.
    """
    if w3.ndim != 4 or w3.shape[1] != 3:
        raise DimensionError(
            f"adapt_input_layer needs a (Co, 3, k, k) weight, got shape {w3.shape}")
    if out_channels < 1:
        raise DimensionError(f"out_channels must be >= 1, got {out_channels}")
    data = w3.data if isinstance(w3, Tensor) else np.asarray(w3)
    widened = data[:, np.arange(out_channels) % 3, :, :]
    return Tensor(np.array(widened), requires_grad=False)


class LossNetwork(Module):
    """Frozen VGG16-shaped feature extractor for 31-band input.

    The first conv is drawn at 3 input channels and widened by channel
    copying; all weights are frozen at construction.  features() stops
    at the third tap, so the last conv group exists only for checkpoint
    compatibility.
    """

    TAP_GROUPS = (1, 2, 3)  # groups whose final activation feeds pools 2, 3, 4
    TAP_CHANNELS = (128, 256, 512)

    def __init__(self, in_channels=31, seed=0, dtype=np.float32):
        super().__init__()
        if in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {in_channels}")
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.convs = ModuleList()
        self._group_ends = []
        prev = in_channels
        for group in _VGG_PLAN:
            for width in group:
                conv = Conv2d(prev, width, 3, pad=1, bias=True, rng=rng, dtype=dtype)
                if prev == in_channels and in_channels != 3:
                    base = Conv2d(3, width, 3, pad=1, bias=True,
                                  rng=np.random.default_rng(seed), dtype=dtype)
                    conv.weight = adapt_input_layer(base.weight, in_channels)
                self.convs.append(conv)
                prev = width
            self._group_ends.append(len(self.convs) - 1)
        self.requires_grad_(False)

    def features(self, x):
        """Taps before pools 2, 3 and 4: widths 128, 256, 512."""
        if x.ndim != 4:
            raise DimensionError(f"expected an NCHW input, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise DimensionError(
                f"loss network expects {self.in_channels} channels, got {x.shape[1]}")
        H, W = x.shape[2], x.shape[3]
        if H < 8 or W < 8:
            raise DimensionError(
                f"input {H}x{W} too small for three pool stages (need >= 8x8)")
        taps = []
        y = x
        tap_convs = [self._group_ends[g] for g in self.TAP_GROUPS]
        for idx, conv in enumerate(self.convs):
            y = relu(conv(y))
            if idx in tap_convs:
                taps.append(y)
                if idx == tap_convs[-1]:
                    break
            if idx in self._group_ends:
                y = max_pool2d(y, 2, stride=2)
        return taps

    def forward(self, x):
        return self.features(x)


def extract_features(net, x):
    return net.features(x)


@dataclass
class LossWeights:
    """Per-tap feature (alpha) and style (beta) weights plus pixel gamma."""

    alpha: tuple = (1.0, 1.0, 1.0)
    beta: tuple = (5e3, 5e3, 5e3)
    gamma_pix: float = 1.0

    def validate(self):
        if len(self.alpha) != 3 or len(self.beta) != 3:
            raise ConfigError("alpha and beta must each hold 3 weights")
        values = tuple(self.alpha) + tuple(self.beta) + (self.gamma_pix,)
        if any(v < 0 for v in values):
            raise ConfigError(f"loss weights must be non-negative, got {values}")
        if not any(v > 0 for v in values):
            raise ConfigError("at least one loss weight must be positive")
        return self


def _check_match(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def feature_loss(taps_pred, taps_true, j):
    """Mean absolute difference of tap j, averaged over all elements."""
    p, t = taps_pred[j], taps_true[j]
    _check_match(p, t, f"feature tap {j}")
    return tensor_mean(absolute(p - t))


def gram(phi):
    """psi psi^T / (C*H*W) with psi the C x (H*W) unfolding.

    Accepts one feature map (C, H, W) or a batch (N, C, H, W); the
    batched form returns one Gram matrix per element.
    """
    if phi.ndim == 3:
        C, H, W = phi.shape
        psi = reshape(phi, (C, H * W))
        return matmul(psi, transpose(psi, (1, 0))) * (1.0 / (C * H * W))
    if phi.ndim == 4:
        N, C, H, W = phi.shape
        psi = reshape(phi, (N, C, H * W))
        return matmul(psi, transpose(psi, (0, 2, 1))) * (1.0 / (C * H * W))
    raise DimensionError(f"gram expects (C,H,W) or (N,C,H,W), got shape {phi.shape}")


def style_loss(taps_pred, taps_true, j):
    """Mean absolute difference between Gram matrices at tap j."""
    p, t = taps_pred[j], taps_true[j]
    _check_match(p, t, f"style tap {j}")
    return tensor_mean(absolute(gram(p) - gram(t)))


def pixel_loss(pred, true):
    """Mean squared difference over every element."""
    _check_match(pred, true, "pixel loss")
    diff = pred - true
    return tensor_mean(diff * diff)


def total_loss(pred, true, net, weights=None):
    """Weighted sum of the three feature, three style and one pixel term."""
    total, _ = loss_breakdown(pred, true, net, weights)
    return total


def loss_breakdown(pred, true, net, weights=None):
    """total_loss plus a float dict of each term for logging.

    Feature extraction is skipped entirely when every alpha and beta is
    zero, so a pixel-only loss never needs a loss network (net may then
    be None).
    """
    weights = (weights or LossWeights()).validate()
    _check_match(pred, true, "loss inputs")
    parts = {}
    total = None

    def accumulate(term, coeff, key):
        nonlocal total
        parts[key] = float(term.data)
        if coeff == 0:
            return
        weighted = term * float(coeff)
        total = weighted if total is None else total + weighted

    if any(weights.alpha) or any(weights.beta):
        taps_pred = net.features(pred)
        taps_true = net.features(true)
        for j in range(3):
            accumulate(feature_loss(taps_pred, taps_true, j), weights.alpha[j],
                       f"feat{j}")
        for j in range(3):
            accumulate(style_loss(taps_pred, taps_true, j), weights.beta[j],
                       f"style{j}")
    accumulate(pixel_loss(pred, true), weights.gamma_pix, "pixel")
    if total is None:
        # all weights zero is rejected by validate; defensive fallback
        total = pixel_loss(pred, true) * 0.0
    parts["total"] = float(total.data)
    return total, parts
