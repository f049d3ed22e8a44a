"""The three-term training loss, piece by piece.

A frozen encoder re-reads both cubes; the loss compares them at the
pixel level, at three feature depths, and through Gram matrices that
summarize channel co-activation.  This script evaluates each piece on
random cubes and shows how the weighted total is assembled.
"""

import numpy as np

from mxrunet.loss import (LossNetwork, LossWeights, extract_features, gram,
                          loss_breakdown, pixel_loss)
from mxrunet.tensor import tensor

rng = np.random.default_rng(0)

# The feature extractor: a frozen classifier backbone whose first conv
# was widened from 3 input channels to 31 by tiling the RGB kernels.
net = LossNetwork(seed=0)
print("loss net trainable params:",
      sum(p.requires_grad for _, p in net.named_parameters()))

pred = tensor(rng.random((2, 31, 32, 32)).astype(np.float32))
true = tensor(rng.random((2, 31, 32, 32)).astype(np.float32))

# Three taps at increasing depth and coarseness.
for j, phi in enumerate(extract_features(net, true)):
    print(f"tap {j}: {phi.shape}")

# --- Gram matrices --------------------------------------------------
# G = psi psi^T / (C H W) for the flattened feature map.  Symmetric
# and positive semi-definite by construction; a hand example:
psi = tensor(np.array([[[1.0]], [[2.0]]]))
print("gram of [[1],[2]]:\n", gram(psi).data)

# --- the breakdown --------------------------------------------------
# parts holds the raw, unweighted value of every term; the weights are
# applied only when the total is assembled.
weights = LossWeights()
total, parts = loss_breakdown(pred, true, net, weights)
for name in sorted(parts):
    print(f"  {name:7s} {parts[name]:.6f}")

recombined = (
    sum(a * parts[f"feat{j}"] for j, a in enumerate(weights.alpha))
    + sum(b * parts[f"style{j}"] for j, b in enumerate(weights.beta))
    + weights.gamma_pix * parts["pixel"])
print("weighted recombination matches total:",
      abs(recombined - parts["total"]) / parts["total"] < 1e-6)

# With alpha and beta zeroed the extractor never runs; only the pixel
# term survives, so training can start cheap and add perception later.
cheap = LossWeights(alpha=(0.0, 0.0, 0.0), beta=(0.0, 0.0, 0.0))
total_px, parts_px = loss_breakdown(pred, true, None, cheap)
print("pixel-only parts:", sorted(parts_px))
print("matches plain pixel loss:",
      total_px.item() == pixel_loss(pred, true).item())

# A model compared with itself is exactly zero in every term.
zero_total, zero_parts = loss_breakdown(true, true, net, weights)
print("self comparison total:", zero_total.item())
