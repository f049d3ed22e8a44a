"""Tour of the building-block layers.

Shows the activation, the conv + batchnorm unit, checkerboard-free
upsampling, and the self-attention layer in isolation, with the small
invariants each one is designed around.
"""

import numpy as np

from mxrunet.layers import (ConvLayer, PixelShuffleUpsampler, SelfAttention,
                            blur, mish, pixel_shuffle)
from mxrunet.tensor import tensor

rng = np.random.default_rng(0)

# --- mish -----------------------------------------------------------
# x * tanh(softplus(x)): smooth, non-monotonic, passes through zero.
xs = tensor(np.array([-3.0, -1.0, 0.0, 1.0, 3.0], dtype=np.float32))
print("mish:", mish(xs).data.round(4))

# --- ConvLayer ------------------------------------------------------
# conv + batchnorm + mish in one unit.  The conv carries no bias when
# a batchnorm follows; beta plays that role.
layer = ConvLayer(3, 8, kernel=3, rng=rng)
x = tensor(rng.standard_normal((2, 3, 16, 16)).astype(np.float32))
y = layer(x)
print("ConvLayer out:", y.shape, "conv bias is", layer.conv.bias)

# Strided variant halves the grid.
down = ConvLayer(3, 8, kernel=3, stride=2, rng=rng)
print("strided out:", down(x).shape)

# --- pixel shuffle + ICNR -------------------------------------------
# Shuffle rearranges channels into space; with ICNR weights the four
# sub-pixel phases start identical, so the first output is blocky
# instead of checkerboarded.
z = tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
print("pixel_shuffle r=2:", pixel_shuffle(z, 2).shape)

up = PixelShuffleUpsampler(8, 8, rng=rng)
raw = up.raw_upsample(z).data
print("phase (0,0) == phase (0,1) at init:",
      np.array_equal(raw[:, :, 0::2, 0::2], raw[:, :, 0::2, 1::2]))
print("upsampled (with blur):", up(z).shape)

# --- blur -----------------------------------------------------------
# 2x2 average with replicate padding.  Constants survive untouched.
flat = tensor(np.full((1, 2, 5, 5), 3.25, dtype=np.float32))
print("blur keeps constants:",
      np.array_equal(blur(flat).data, flat.data))

# --- self-attention -------------------------------------------------
# gamma starts at zero, so the layer is an exact identity on day one;
# training has to opt in to long-range mixing.
attn = SelfAttention(8, rng=rng)
a = tensor(rng.standard_normal((1, 8, 6, 6)).astype(np.float32))
print("attention starts as identity:",
      np.array_equal(attn(a).data, a.data))

amap = attn.attention_map(a).data
print("attention rows sum to one:",
      np.allclose(amap.sum(axis=-1), 1.0, atol=1e-6))
