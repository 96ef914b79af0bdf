"""
Images, manifests and patches
=============================

Generate the synthetic 7-class corpus, split it, and cut every 64x64 image
into its 16 48x48 training patches.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from rau_emotion import data

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())

manifest = data.synth_generate(n_per_class=23, seed=7, out_dir=out)
split = data.split_dataset(manifest, train_fraction=0.75, seed=7)
data.write_manifest(split, out / "manifest.split.tsv")
print(len(split.select("train")), "train /", len(split.select("test")), "test")

# one glyph per class; print a coarse ascii view of each
x, y = data.load_batch(split, "train")
for c, name in enumerate(data.CLASS_NAMES):
    img = x[y == c][0, 0]
    small = img.reshape(16, 4, 16, 4).mean(axis=(1, 3))
    print(name)
    print("\n".join("".join(" .:#"[min(3, int(v * 4))] for v in row) for row in small))

# 4 offsets per axis -> 16 crops that together cover the whole image
patches = data.extract_patches(x[0, 0])
print(patches.shape, "offsets", data.PATCH_OFFSETS)

xp, yp = data.load_batch(split, "train", augment=True)
print("augmented training set", xp.shape, np.bincount(yp))

# PNG and PGM both decode to floats in [0, 1]
png = data.encode_png(x[0, 0])
print(np.abs(data.decode_image(png) - x[0, 0]).max() <= 0.5 / 255)
