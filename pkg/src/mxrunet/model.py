"""U-Net assembly over residual encoders of depth 18, 34 or 50.

The encoder exposes four skip taps at 1/2, 1/4, 1/8 and 1/16 of the
input resolution; the bottleneck works at 1/32.  Four decoder blocks
consume the taps deepest-first, optional self-attention follows the
second decoder block, and the head upsamples back to full resolution,
re-joins the raw input, and projects to the output band count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import (Conv2d, ConvLayer, DecoderBlock, Module, ModuleList,
                     PixelShuffleUpsampler, ResidualBlock, SelfAttention, Stem)
from .tensor import concat_channels, max_pool2d

# stage widths before any expansion; shared by all depths
_STAGE_WIDTHS = (64, 128, 256, 512)

_STAGE_PLANS = {
    18: ("basic", (2, 2, 2, 2)),
    34: ("basic", (3, 4, 6, 3)),
    50: ("bottleneck", (3, 4, 6, 3)),
}


@dataclass
class ModelConfig:
    """Architecture knobs; width_multiplier < 1 gives desk-scale models."""

    encoder_depth: int = 50
    in_channels: int = 3
    out_channels: int = 31
    width_multiplier: float = 1.0
    self_attention: bool = True
    blur: bool = True
    final_blur: bool = True

    def validate(self):
        if self.encoder_depth not in _STAGE_PLANS:
            raise ConfigError(
                f"encoder_depth must be one of {sorted(_STAGE_PLANS)}, "
                f"got {self.encoder_depth}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.out_channels < 1:
            raise ConfigError(f"out_channels must be >= 1, got {self.out_channels}")
        if not self.width_multiplier > 0:
            raise ConfigError(
                f"width_multiplier must be positive, got {self.width_multiplier}")
        if self.width_multiplier * 64 < 8:
            raise ConfigError(
                f"width_multiplier {self.width_multiplier} too small: "
                f"64 * multiplier must be at least 8")
        return self


def _scaled(channels, multiplier):
    return max(1, int(round(channels * multiplier)))


class Encoder(Module):
    """Residual encoder with the averaged-pool downsample variant.

    forward_taps returns the 1/32 feature map plus the four skip
    activations (1/2 pre-pool stem output, then the outputs of the
    first three stages).
    """

    def __init__(self, depth, width_multiplier=1.0, in_channels=3, rng=None,
                 dtype=np.float32):
        super().__init__()
        if depth not in _STAGE_PLANS:
            raise ConfigError(f"encoder depth must be one of {sorted(_STAGE_PLANS)}, got {depth}")
        kind, counts = _STAGE_PLANS[depth]
        expansion = ResidualBlock.EXPANSION[kind]
        self.depth = depth
        stem_widths = tuple(_scaled(c, width_multiplier) for c in (32, 32, 64))
        self.stem = Stem(in_channels, stem_widths, rng=rng, dtype=dtype)

        self.stages = ModuleList()
        tap_channels = [self.stem.out_channels]
        current = self.stem.out_channels
        for idx, (base, count) in enumerate(zip(_STAGE_WIDTHS, counts)):
            hidden = _scaled(base, width_multiplier)
            out = hidden * expansion
            stage = ModuleList()
            for b in range(count):
                stride = 2 if (idx > 0 and b == 0) else 1
                stage.append(ResidualBlock(current, out, kind=kind, stride=stride,
                                           hidden=hidden, rng=rng, dtype=dtype))
                current = out
            self.stages.append(stage)
            if idx < 3:
                tap_channels.append(out)
        self.tap_channels = tap_channels
        self.out_channels = current

    def forward_taps(self, x):
        pre_pool = self.stem.conv_out(x)
        taps = [pre_pool]
        y = max_pool2d(pre_pool, 3, stride=2, pad=1)
        for idx, stage in enumerate(self.stages):
            for block in stage:
                y = block(y)
            if idx < 3:
                taps.append(y)
        return y, taps

    def forward(self, x):
        return self.forward_taps(x)[0]


def build_mxresnet(depth, width_multiplier=1.0, in_channels=3, rng=None,
                   dtype=np.float32):
    """Encoder factory; depth selects the stage plan (18/34 basic, 50 bottleneck)."""
    if rng is None:
        rng = np.random.default_rng(0)
    return Encoder(depth, width_multiplier, in_channels, rng=rng, dtype=dtype)


class MXRUNet(Module):
    """Full reconstruction network: encoder, bottleneck, decoders, head."""

    def __init__(self, config, rng=None, dtype=np.float32):
        super().__init__()
        config.validate()
        if rng is None:
            rng = np.random.default_rng(0)
        object.__setattr__(self, "config", config)
        kw = dict(rng=rng, dtype=dtype)

        self.encoder = Encoder(config.encoder_depth, config.width_multiplier,
                               config.in_channels, **kw)
        enc_out = self.encoder.out_channels
        self.bottleneck = ModuleList([
            ConvLayer(enc_out, 2 * enc_out, 3, **kw),
            ConvLayer(2 * enc_out, enc_out, 3, **kw),
        ])

        self.decoders = ModuleList()
        current = enc_out
        for skip_c in reversed(self.encoder.tap_channels):
            block = DecoderBlock(current, skip_c, use_blur=config.blur, **kw)
            self.decoders.append(block)
            current = block.out_channels

        attn_width = self.decoders[1].out_channels
        if config.self_attention:
            self.attention = SelfAttention(attn_width, **kw)
        else:
            object.__setattr__(self, "attention", None)

        self.final_up = PixelShuffleUpsampler(current, current // 2, scale=2,
                                              use_blur=config.final_blur, **kw)
        head_width = current // 2 + config.in_channels
        self.head_block = ResidualBlock(head_width, head_width, kind="basic",
                                        pool_shortcut=False, **kw)
        self.head_conv = Conv2d(head_width, config.out_channels, 1, bias=True, **kw)

    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"expected an NCHW input, got shape {x.shape}")
        N, C, H, W = x.shape
        if C != self.config.in_channels:
            raise DimensionError(
                f"model expects {self.config.in_channels} input channels, got {C}")
        if H % 32 or W % 32:
            padded_h = -(-H // 32) * 32
            padded_w = -(-W // 32) * 32
            raise DimensionError(
                f"input {H}x{W} is not a multiple of 32; reflect-pad it to "
                f"{padded_h}x{padded_w} and crop the output back to {H}x{W}")
        y, taps = self.encoder.forward_taps(x)
        for layer in self.bottleneck:
            y = layer(y)
        for idx, (block, skip) in enumerate(zip(self.decoders, reversed(taps))):
            y = block(y, skip)
            if idx == 1 and self.attention is not None:
                y = self.attention(y)
        y = self.final_up(y)
        y = concat_channels([y, x])
        y = self.head_block(y)
        return self.head_conv(y)


def build_unet(config, seed=0, dtype=np.float32):
    """Build a reconstruction net with deterministic seeded init."""
    return MXRUNet(config, rng=np.random.default_rng(seed), dtype=dtype)


def count_params(model):
    """Total count of trainable scalars (weights, biases, norm affines, gates)."""
    return int(model.num_params())
