"""The three on-disk formats, written and read back.

Everything is little-endian and self-describing: spectral cubes in a
17-byte-header container, RGB images as binary P6 PPM, and model
weights in a tagged checkpoint that rebuilds the architecture on load.
All writes here go to a throwaway directory.
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from mxrunet.formats import (load_checkpoint, pair_dataset, read_cube,
                             read_rgb, save_checkpoint, write_cube, write_rgb)
from mxrunet.model import ModelConfig, build_unet

work = Path(tempfile.mkdtemp(prefix="formats-demo-"))
print("writing under", work)

# --- spectral cubes (.hsc) ------------------------------------------
# magic 'HSC1', u32 C/H/W, u8 dtype tag, then C*H*W float32s.
cube = np.linspace(-1.0, 2.0, 31 * 8 * 10,
                   dtype=np.float32).reshape(31, 8, 10)
write_cube(cube, work / "demo.hsc")

raw = (work / "demo.hsc").read_bytes()
magic, c, h, w, tag = struct.unpack_from("<4sIIIB", raw)
print(f".hsc header: magic={magic} C={c} H={h} W={w} tag={tag}")
print("file size = 17 + 4*C*H*W:", len(raw) == 17 + 4 * c * h * w)
print("roundtrip bitwise:",
      np.array_equal(read_cube(work / "demo.hsc"), cube))

# --- RGB images (P6 PPM) --------------------------------------------
# Floats in [0, 1] quantize to a maxval of 255 on write and scale back
# on read, so a second write of the reread image is byte-identical.
rgb = np.random.default_rng(0).random((3, 8, 10)).astype(np.float32)
write_rgb(rgb, work / "demo.ppm")
again = read_rgb(work / "demo.ppm")
write_rgb(again, work / "again.ppm")
print("P6 write/read/write stable:",
      (work / "demo.ppm").read_bytes() == (work / "again.ppm").read_bytes())

# --- checkpoints ----------------------------------------------------
# The config block travels with the weights; load_checkpoint with no
# model argument rebuilds the right architecture by itself.
model = build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                   seed=0)
save_checkpoint(work / "model.ckpt", model)
print("checkpoint size:", (work / "model.ckpt").stat().st_size, "bytes")

loaded, opt_state = load_checkpoint(work / "model.ckpt")
same = all(np.array_equal(pa.data, pb.data)
           for (_, pa), (_, pb) in zip(model.named_parameters(),
                                       loaded.named_parameters()))
print("weights roundtrip bitwise:", same,
      "| optimizer state present:", opt_state is not None)

# --- training pairs on disk -----------------------------------------
# A dataset is two sibling directories matched by file stem.
(work / "rgb").mkdir()
(work / "cubes").mkdir()
for stem in ("a", "b"):
    write_rgb(rgb, work / "rgb" / f"{stem}.ppm")
    write_cube(cube, work / "cubes" / f"{stem}.hsc")
write_rgb(rgb, work / "rgb" / "orphan.ppm")

pairs = pair_dataset(work)
print("paired", len(pairs), "of 3 images (the orphan logs a warning)")
