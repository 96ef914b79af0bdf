"""
Training the CNN
================

Three conv/pool stages and two dense layers, trained on patches of the
synthetic corpus. Training runs in blocks; the weights from the block with
the best held-out accuracy are kept.
"""

import sys
import tempfile
from pathlib import Path

from rau_emotion import cnn, data
from rau_emotion.evaluation import render_report

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
split = data.split_dataset(data.synth_generate(23, 7, out), 0.75, 7)

config = cnn.CnnConfig(epochs_per_run=5, runs=3, seed=0)
model = cnn.build_cnn(config)
for shape in model.state.spec.shapes():
    print(shape)

model = cnn.train_cnn(model, split, log_fn=lambda e: print(e.line()))
print("best block", model.best_block, "val acc", model.best_val_accuracy)

# patch-level and image-level (mean over 16 patches) scores
for report in cnn.evaluate_cnn(model, split, k=2):
    print(render_report(report))

cnn.save_cnn(model, out / "cnn.ckpt")
again = cnn.load_cnn(out / "cnn.ckpt")
img = data.load_image64(split.resolve(split.select("test")[0]))
print(cnn.predict_image(again, img, k=3))
