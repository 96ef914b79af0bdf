"""Facial emotion classification with per-class autoencoder units and a small CNN.

Everything (kernels, backpropagation, image decoding) is implemented on top of
numpy; see the submodules:

- ``tensor``: float32 kernels (matmul, valid conv, max-pool, activations, softmax)
- ``layers``: layer specs, forward/backward, losses, SGD with momentum
- ``checkpoint``: binary checkpoint format
- ``data``: PGM/PNG decoding, resizing, patches, manifests, synthetic corpus
- ``rau``: representational autoencoder units and cosine matching
- ``cnn``: the 8-layer CNN
- ``evaluation``: accuracy, confusion matrices, reports, filter maps
"""

from .data import CLASS_ABBREVS, CLASS_NAMES

__version__ = "0.1.0"
__all__ = ["CLASS_NAMES", "CLASS_ABBREVS", "__version__"]
