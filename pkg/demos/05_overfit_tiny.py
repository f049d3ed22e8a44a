"""Overfitting two synthetic image pairs from scratch.

The fastest possible end-to-end sanity check: if gradients, the
optimizer and the schedule are wired correctly, a small model must be
able to memorize two 32x32 pairs in a couple hundred steps.  The
built-in selftest runs this same experiment with a pass threshold;
here we just watch the loss fall.
"""

from mxrunet.metrics import evaluate_dataset
from mxrunet.model import ModelConfig, build_unet
from mxrunet.selftest import synthetic_pairs
from mxrunet.training import (LossWeights, NormalizationStats,
                              OneCycleSchedule, fit, identity_augment)

# Two pairs whose cubes are fixed linear mixtures of the RGB planes;
# easy to fit, impossible to fake.
pairs = synthetic_pairs(count=2, size=32, seed=7)
print("pairs:", [(rgb.shape, cube.shape) for rgb, cube in pairs])

model = build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                   seed=0)
stats = NormalizationStats.from_pairs(pairs)

# One-cycle shape compressed to 200 total steps.  The peak lr is well
# above the full-scale default: with this few steps each one has to
# move the weights further.
schedule = OneCycleSchedule(lr_peak=1e-2, phase1=60.0, phase2=140.0)

log = fit(model, pairs, None, epochs=200, schedule=schedule,
          weights=LossWeights(alpha=(0.0,) * 3, beta=(0.0,) * 3),
          batch_size=2, stats=stats, augment_cfg=identity_augment(),
          seed=0)

# One iteration record per step, one summary per epoch.
iters = [r for r in log if r["kind"] == "iteration"]
print(f"{len(iters)} iterations logged")
for r in iters[:: len(iters) // 8]:
    print(f"  step {r['iter']:3d}  lr {r['lr']:.2e}  "
          f"pixel {r['pixel']:.4f}")

first, last = iters[0]["pixel"], iters[-1]["pixel"]
print(f"pixel loss {first:.4f} -> {last:.4f} "
      f"({100 * last / first:.1f}% of start)")

model.eval()
report = evaluate_dataset(model, pairs, stats=stats)
print(f"MRAE on the training pairs: {report.mrae:.4f}")
