"""
Representational autoencoder units
==================================

One autoencoder per class, all from the same starting weights. Each class
is summarised by the mean code of its images; a new image is embedded by a
scratch autoencoder trained on it alone, then matched by cosine distance.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from rau_emotion import data, rau
from rau_emotion.evaluation import render_report

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
split = data.split_dataset(data.synth_generate(23, 7, out), 0.75, 7)

# the shallow 4096-300-4096 net is quick; "deep" adds the 2800-wide layers.
# embed_iterations should match epochs_per_class so codes are comparable.
config = rau.AutoencoderConfig("shallow", 300, epochs_per_class=20, embed_iterations=20)
model = rau.train_rau_from_manifest(split, config)
for unit, ae in zip(model.units, model.autoencoders):
    print(f"{unit.class_label:<10} mse {ae.loss_history[0]:.4f} -> {ae.loss_history[-1]:.4f}")

# pairwise distances between the units themselves
d = np.array([[rau.cosine_distance(a.vector, b.vector) for b in model.units]
              for a in model.units])
print(np.round(d, 3))

x, y = data.load_batch(split, "test", flatten=True)
print("true", data.CLASS_NAMES[y[0]], "->", rau.classify_topk(model, x[0], k=2))

print(render_report(rau.evaluate_rau(model, split, k=2, dataset="synthetic test")))
rau.save_rau(model, out / "rau")
