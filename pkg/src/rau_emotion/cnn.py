"""The 8-layer emotion CNN: three conv/pool stages and two dense layers.

With the default config a 48x48 patch flows as::

    1x48x48 -conv5-> 10x44x44 -pool-> 10x22x22 -conv5-> 10x18x18 -pool-> 10x9x9
            -conv4-> 10x6x6 -pool-> 10x3x3 -flatten-> 90 -dense-> 64 -dense-> 7 -softmax
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .checkpoint import load_checkpoint, save_checkpoint
from .data import CLASS_NAMES, PATCH_SIZE, extract_patches, load_batch
from .evaluation import report_from_rankings
from .tensor import DTYPE, DimensionError

PREDICT_CHUNK = 512


@dataclass
class CnnConfig:
    filters_per_conv: int = 10
    conv_kernel_sizes: tuple = (5, 5, 4)
    pool: int = 2
    fc_hidden: int = 64
    classes: int = 7
    optimizer: L.OptimizerConfig = field(
        default_factory=lambda: L.OptimizerConfig(learning_rate=0.01, momentum=0.9, batch_size=32))
    epochs_per_run: int = 20
    runs: int = 5
    validation_fraction: float = 0.1
    seed: int = 0

    def model_spec(self):
        layers = []
        for k in self.conv_kernel_sizes:
            layers += [L.conv(self.filters_per_conv, k), L.activation("relu"), L.maxpool(self.pool)]
        layers += [L.flatten(), L.dense(self.fc_hidden), L.activation("relu"),
                   L.dense(self.classes), L.softmax()]
        return L.ModelSpec(tuple(layers), (1, PATCH_SIZE, PATCH_SIZE), self.seed)

    def to_meta(self):
        meta = {k: v for k, v in asdict(self).items() if k != "optimizer"}
        meta["conv_kernel_sizes"] = ",".join(map(str, self.conv_kernel_sizes))
        meta.update({f"opt_{k}": v for k, v in asdict(self.optimizer).items()})
        return {k: str(v) for k, v in meta.items()}

    @classmethod
    def from_meta(cls, meta):
        opt = L.OptimizerConfig(float(meta["opt_learning_rate"]), float(meta["opt_momentum"]),
                                int(meta["opt_batch_size"]))
        return cls(int(meta["filters_per_conv"]),
                   tuple(int(k) for k in meta["conv_kernel_sizes"].split(",")),
                   int(meta["pool"]), int(meta["fc_hidden"]), int(meta["classes"]), opt,
                   int(meta["epochs_per_run"]), int(meta["runs"]),
                   float(meta["validation_fraction"]), int(meta["seed"]))


@dataclass
class BlockLog:
    block: int
    iterations: int
    train_loss: float
    val_accuracy: float

    def line(self):
        return f"{self.block}\t{self.iterations}\t{self.train_loss:.6f}\t{self.val_accuracy:.6f}"


@dataclass
class CnnModel:
    config: CnnConfig
    state: L.ModelState
    log: list = field(default_factory=list)
    best_block: int = -1
    best_val_accuracy: float = float("nan")


def build_cnn(config=None):
    config = config or CnnConfig()
    state = L.build_model(config.model_spec())
    if state.spec.output_shape != (config.classes,):
        raise L.BuildError(f"network output {state.spec.output_shape} != ({config.classes},)")
    return CnnModel(config, state)


def conv_layer_positions(model):
    return [i for i, layer in enumerate(model.state.spec.layers) if layer.kind == "conv"]


def patch_input(image):
    """Shape a patch (or the central 48x48 crop of a larger image) as ``[1,48,48]``."""
    img = np.asarray(image, dtype=DTYPE)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2 or img.shape[0] < PATCH_SIZE or img.shape[1] < PATCH_SIZE:
        raise DimensionError(f"need a 48x48 patch or larger image, got {np.shape(image)}")
    y = (img.shape[0] - PATCH_SIZE) // 2
    x = (img.shape[1] - PATCH_SIZE) // 2
    return img[None, y:y + PATCH_SIZE, x:x + PATCH_SIZE]


def predict_patches(model, patches):
    """Softmax outputs for a ``[n,1,48,48]`` batch."""
    patches = np.asarray(patches, dtype=DTYPE)
    out = [L.forward(model.state, patches[i:i + PREDICT_CHUNK])[0]
           for i in range(0, len(patches), PREDICT_CHUNK)]
    return np.concatenate(out) if out else np.zeros((0, model.config.classes), dtype=DTYPE)


def predict_patch(model, patch):
    patch = np.asarray(patch, dtype=DTYPE)
    if patch.shape != (1, PATCH_SIZE, PATCH_SIZE):
        raise DimensionError(f"predict_patch needs a [1,48,48] patch, got {patch.shape}")
    return L.forward(model.state, patch)[0]


def rank_probabilities(probs):
    """Class indices by descending probability; ties keep canonical order."""
    return [int(i) for i in np.argsort(-np.asarray(probs, dtype=np.float64), kind="stable")]


def image_probabilities(model, image):
    """Mean softmax output over the 16 patches of a 64x64 image."""
    patches = extract_patches(image)[:, None]
    return predict_patches(model, patches).astype(np.float64).mean(axis=0)


def predict_image(model, image, k=2):
    """Top-``k`` ``[(class_name, mean_probability), ...]`` for a 64x64 image."""
    if not 1 <= k <= model.config.classes:
        raise ValueError(f"k must be in [1, {model.config.classes}], got {k}")
    probs = image_probabilities(model, image)
    return [(CLASS_NAMES[i], float(probs[i])) for i in rank_probabilities(probs)[:k]]


def patch_accuracy(model, patches, labels):
    if len(patches) == 0:
        return float("nan")
    pred = predict_patches(model, patches).argmax(axis=1)
    return float(np.mean(pred == labels))


def _validation_split(labels, n_images, fraction, seed):
    """Pick whole source images for validation, stratified by class.

    Returns boolean masks over patches ``(train, val)``.
    """
    per_image = len(labels) // n_images
    image_labels = labels[::per_image]
    rng = np.random.default_rng(seed)
    val_images = []
    for c in np.unique(image_labels):
        idx = np.flatnonzero(image_labels == c)
        n_val = int(np.floor(len(idx) * fraction + 0.5))
        n_val = min(n_val, len(idx) - 1)
        val_images.extend(idx[rng.permutation(len(idx))[:n_val]])
    val = np.zeros(n_images, dtype=bool)
    val[val_images] = True
    val = np.repeat(val, per_image)
    return ~val, val


def fit_cnn(model, inputs, labels, val_inputs=None, val_labels=None, log_fn=None):
    """Train in blocks of ``epochs_per_run`` and keep the best-validation weights.

    Without validation data, training accuracy stands in for it.
    """
    cfg = model.config
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty split")
    if val_inputs is None or len(val_inputs) == 0:
        val_inputs, val_labels = inputs, labels
    best = None
    for run in range(cfg.runs):
        _, history = L.train_epochs(model.state, (inputs, labels), cfg.optimizer,
                                    cfg.epochs_per_run, "cross_entropy",
                                    rng_seed=cfg.seed + run)
        acc = patch_accuracy(model, val_inputs, val_labels)
        entry = BlockLog(run + 1, model.state.epochs,
                         float(np.mean(history)) if history else float("nan"), acc)
        model.log.append(entry)
        if log_fn:
            log_fn(entry)
        if best is None or acc > model.best_val_accuracy:
            best = model.state.copy()
            model.best_block, model.best_val_accuracy = entry.block, acc
    if best is not None:
        best.loss_history = list(model.state.loss_history)
        model.state = best
    return model


def train_cnn(model, manifest, log_fn=None):
    """Train on all 16 patches of every training image in ``manifest``."""
    cfg = model.config
    patches, labels = load_batch(manifest, "train", augment=True)
    if len(patches) == 0:
        raise ValueError("the training split is empty")
    n_images = len(manifest.select("train"))
    train_mask, val_mask = _validation_split(labels, n_images, cfg.validation_fraction, cfg.seed)
    return fit_cnn(model, patches[train_mask], labels[train_mask],
                   patches[val_mask], labels[val_mask], log_fn)


def evaluate_cnn(model, manifest, k=2, split="test", dataset="test"):
    """Patch-level and image-level (mean of 16 patches) reports for one split."""
    patches, labels = load_batch(manifest, split, augment=True)
    if len(patches) == 0:
        raise ValueError(f"the {split!r} split is empty")
    probs = predict_patches(model, patches).astype(np.float64)
    patch_report = report_from_rankings(f"{dataset} patches", labels,
                                        [rank_probabilities(p) for p in probs], k)
    n_patch = len(patches) // len(manifest.select(split))
    image_probs = probs.reshape(-1, n_patch, probs.shape[1]).mean(axis=1)
    image_report = report_from_rankings(f"{dataset} images", labels[::n_patch],
                                        [rank_probabilities(p) for p in image_probs], k)
    patch_report.notes.append("Scored per 48x48 patch (16 per source image).")
    image_report.notes.append("Scored per image from the mean of its 16 patch predictions.")
    return patch_report, image_report


def save_cnn(model, path):
    meta = model.config.to_meta()
    meta["best_block"] = str(model.best_block)
    meta["best_val_accuracy"] = repr(float(model.best_val_accuracy))
    save_checkpoint(model.state, path, meta=meta)


def load_cnn(path):
    state, meta = load_checkpoint(path)
    config = CnnConfig.from_meta(meta)
    if state.spec != config.model_spec():
        raise L.BuildError(f"{path}: stored layers do not match the stored CNN config")
    return CnnModel(config, state, best_block=int(meta.get("best_block", -1)),
                    best_val_accuracy=float(meta.get("best_val_accuracy", "nan")))
