"""
Reports and filter maps
=======================

Confusion matrices from hand-entered counts, and the per-filter output maps
of a conv layer written as PGM images.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from rau_emotion import cnn, data
from rau_emotion import evaluation as E

# a 105-image result, rows true and columns predicted
cm = np.array([[4, 2, 0, 1, 3, 1, 4], [0, 20, 0, 0, 1, 0, 0], [0, 1, 6, 0, 0, 1, 0],
               [1, 3, 0, 24, 1, 0, 0], [1, 0, 1, 0, 7, 0, 0], [1, 0, 0, 0, 1, 4, 0],
               [1, 4, 1, 2, 0, 3, 6]])
truths = [t for t in range(7) for p in range(7) for _ in range(cm[t, p])]
preds = [p for t in range(7) for p in range(7) for _ in range(cm[t, p])]
ranked = [[p] + [c for c in range(7) if c != p] for p in preds]
print(E.render_report(E.report_from_rankings("LFW Test Set", truths, ranked, k=2)))

# filter maps of an untrained default CNN on a synthetic face stand-in
out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
img = data.synth_image(5, np.random.default_rng(0)).astype(np.float32)
model = cnn.build_cnn()
for layer in (1, 2, 3):
    maps = E.visualize_filter_maps(model, img, layer, brightness_scale=1.5)
    for i, fmap in enumerate(maps, start=1):
        (out / f"layer{layer}_filter{i:02d}.pgm").write_bytes(data.encode_pgm(fmap))
    print("layer", layer, len(maps), "maps of", maps[0].shape)
print("written to", out)
