"""Representational Autoencoder Units.

One autoencoder is trained per emotion class. A class's representation
unit is the mean center-layer activation of its training images. A test
image is embedded, compared to all seven units by cosine distance, and the
closest classes are reported.

Every autoencoder (class models and per-example scratch models) starts from
the same seeded weights, so hidden unit ``i`` means roughly the same thing in
all of them and their codes can be compared directly. Codes are only
comparable when the scratch models take as many SGD steps as the class
models did, so keep ``embed_iterations`` equal to ``epochs_per_class`` when
each class fits in one batch.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import layers as L
from .checkpoint import load_checkpoint, save_checkpoint
from .data import CLASS_NAMES, load_batch, worker_count
from .tensor import DTYPE, DimensionError

INPUT_DIM = 4096
DEEP_WIDTH = 2800
EMBED_MODES = ("fresh", "class_encoder")


class UndefinedDistanceError(ValueError):
    """Cosine distance involving a zero vector."""


@dataclass
class AutoencoderConfig:
    structure: str = "deep"
    k: int = 300
    epochs_per_class: int = 100
    embed_iterations: int = 100
    optimizer: L.OptimizerConfig = field(
        default_factory=lambda: L.OptimizerConfig(learning_rate=0.5, momentum=0.9, batch_size=32))
    seed: int = 0
    embed_mode: str = "fresh"

    def __post_init__(self):
        if self.structure not in ("shallow", "deep"):
            raise ValueError(f"structure must be 'shallow' or 'deep', got {self.structure!r}")
        if self.k not in (300, 500):
            raise ValueError(f"k must be 300 or 500, got {self.k}")
        if self.epochs_per_class < 0 or self.embed_iterations < 0:
            raise ValueError("epoch and iteration counts must be non-negative")
        if self.embed_mode not in EMBED_MODES:
            raise ValueError(f"embed_mode must be one of {EMBED_MODES}")

    def model_spec(self):
        if self.structure == "shallow":
            widths = [self.k, INPUT_DIM]
        else:
            widths = [DEEP_WIDTH, self.k, DEEP_WIDTH, INPUT_DIM]
        layers = []
        for w in widths:
            layers += [L.dense(w), L.activation("sigmoid")]
        return L.ModelSpec(tuple(layers), (INPUT_DIM,), self.seed)

    @property
    def encoder_depth(self):
        """Number of layers up to and including the center activation."""
        return 2 if self.structure == "shallow" else 4


@dataclass
class RepresentationUnit:
    class_label: str
    vector: np.ndarray
    source: str = "class_centroid"


@dataclass
class RauModel:
    config: AutoencoderConfig
    autoencoders: list
    units: list
    _init: L.ModelState = field(default=None, repr=False, compare=False)

    def initial_state(self):
        """The shared starting weights (built once, then cached). Do not mutate."""
        if self._init is None:
            self._init = L.build_model(self.config.model_spec())
        return self._init


def _check_images(images):
    images = np.asarray(images, dtype=DTYPE)
    if images.ndim == 1:
        images = images[None]
    if images.ndim != 2 or images.shape[1] != INPUT_DIM:
        raise DimensionError(f"expected [n, {INPUT_DIM}] flattened images, got {images.shape}")
    if not np.all(np.isfinite(images)):
        raise ValueError("images contain non-finite pixels")
    return images


def train_class_autoencoder(images, config, init=None):
    """Train one autoencoder to reconstruct ``images`` (MSE)."""
    images = _check_images(images)
    if len(images) == 0:
        raise ValueError("cannot train a class autoencoder on zero images")
    model = init.copy() if init is not None else L.build_model(config.model_spec())
    L.train_epochs(model, (images, None), config.optimizer, config.epochs_per_class,
                   "mse", rng_seed=config.seed)
    return model


def encode(model, images, depth):
    """Center-layer activations of ``images``."""
    out, _ = L.forward(model, _check_images(images), upto=depth)
    return out


def compute_representation_unit(encoder, images, config, class_label=""):
    """Class centroid of the center-layer codes of ``images``."""
    if encoder.epochs == 0 and config.epochs_per_class > 0:
        raise ValueError("representation units need a trained autoencoder")
    codes = encode(encoder, images, config.encoder_depth).astype(np.float64)
    return RepresentationUnit(class_label, codes.mean(axis=0).astype(DTYPE))


def embed_example(image, config, seed=None, init=None):
    """Code of one image from a scratch autoencoder trained only on that image.

    The scratch model runs ``config.embed_iterations`` single-image epochs
    from the seeded starting weights.
    """
    image = _check_images(image)
    if len(image) != 1:
        raise DimensionError("embed_example takes a single image")
    if init is None:
        spec = config.model_spec()
        if seed is not None:
            spec = replace(spec, seed=seed)
        init = L.build_model(spec)
    model = init.copy()
    L.train_epochs(model, (image, None), config.optimizer, config.embed_iterations, "mse",
                   rng_seed=config.seed if seed is None else seed)
    return encode(model, image, config.encoder_depth)[0]


def cosine_distance(a, b):
    """``1 - cos(a, b)``, computed in float64."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"cosine distance needs equal dimensions, got {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedDistanceError("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - (a @ b) / (na * nb), 0.0, 2.0))


def train_rau(class_images, config):
    """Train all seven class autoencoders and their units.

    ``class_images`` maps class name -> ``[n, 4096]`` array. Class models are
    trained on a thread pool of ``worker_count()`` threads; results do not
    depend on scheduling.
    """
    missing = [c for c in CLASS_NAMES if len(class_images.get(c, ())) == 0]
    if missing:
        raise ValueError(f"no training images for class(es): {', '.join(missing)}")
    model = RauModel(config, [], [])
    init = model.initial_state()

    def work(name):
        ae = train_class_autoencoder(class_images[name], config, init)
        return ae, compute_representation_unit(ae, class_images[name], config, name)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(work, CLASS_NAMES))
    model.autoencoders = [ae for ae, _ in results]
    model.units = [u for _, u in results]
    return model


def train_rau_from_manifest(manifest, config):
    images, labels = load_batch(manifest, "train", flatten=True)
    groups = {name: images[labels == i] for i, name in enumerate(CLASS_NAMES)}
    return train_rau(groups, config)


def class_distances(model, image, seed=None):
    """Cosine distance from ``image`` to each class unit, in canonical order."""
    cfg = model.config
    if cfg.embed_mode == "fresh":
        init = model.initial_state() if seed is None else None
        code = embed_example(image, cfg, seed=seed, init=init)
        return np.array([cosine_distance(code, u.vector) for u in model.units])
    dists = []
    for ae, unit in zip(model.autoencoders, model.units):
        dists.append(cosine_distance(encode(ae, image, cfg.encoder_depth)[0], unit.vector))
    return np.array(dists)


def rank_distances(distances):
    """Class indices sorted by ascending distance; ties keep canonical order."""
    return [int(i) for i in np.argsort(np.asarray(distances), kind="stable")]


def classify_topk(model, image, k=2, seed=None):
    """The ``k`` nearest classes as ``[(class_name, distance), ...]``, ascending."""
    if not 1 <= k <= len(CLASS_NAMES):
        raise ValueError(f"k must be in [1, {len(CLASS_NAMES)}], got {k}")
    d = class_distances(model, image, seed)
    return [(CLASS_NAMES[i], float(d[i])) for i in rank_distances(d)[:k]]


def evaluate_rau(model, manifest, k=2, split="test", dataset="test"):
    """Top-1/top-k report for the RAU model over one manifest split."""
    from .evaluation import report_from_rankings

    images, labels = load_batch(manifest, split, flatten=True)
    if len(images) == 0:
        raise ValueError(f"the {split!r} split is empty")
    rankings = [rank_distances(class_distances(model, img)) for img in images]
    return report_from_rankings(dataset, labels, rankings, k)


# ------------------------------------------------------------ persistence

def _units_header(config, units):
    return "\n".join([
        "rau-emotion-units 1",
        f"k {config.k}",
        "classes " + " ".join(u.class_label for u in units),
        f"structure {config.structure}",
        f"seed {config.seed}",
        f"epochs_per_class {config.epochs_per_class}",
        f"embed_iterations {config.embed_iterations}",
        f"embed_mode {config.embed_mode}",
        f"learning_rate {config.optimizer.learning_rate!r}",
        f"momentum {config.optimizer.momentum!r}",
        f"batch_size {config.optimizer.batch_size}",
        "end",
    ]) + "\n"


def save_rau(model, out_dir):
    """Write ``units.bin`` plus one checkpoint per class under ``out_dir``.

    ``units.bin`` is a text header (ending with a line ``end``) followed by
    7 x k little-endian float32 values, one vector per class in header order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = np.stack([u.vector for u in model.units]).astype("<f4").tobytes()
    (out_dir / "units.bin").write_bytes(_units_header(model.config, model.units).encode() + payload)
    for name, ae in zip(CLASS_NAMES, model.autoencoders):
        save_checkpoint(ae, out_dir / f"ae_{name}.ckpt", meta={"class": name})


def load_rau(out_dir):
    from .checkpoint import CheckpointError

    out_dir = Path(out_dir)
    data = (out_dir / "units.bin").read_bytes()
    end = data.find(b"\nend\n")
    if not data.startswith(b"rau-emotion-units 1\n") or end < 0:
        raise CheckpointError(f"{out_dir / 'units.bin'}: bad units header")
    fields = dict(line.split(" ", 1) for line in data[:end].decode().splitlines()[1:])
    opt = L.OptimizerConfig(float(fields["learning_rate"]), float(fields["momentum"]),
                            int(fields["batch_size"]))
    config = AutoencoderConfig(fields["structure"], int(fields["k"]), int(fields["epochs_per_class"]),
                               int(fields["embed_iterations"]), opt, int(fields["seed"]),
                               fields["embed_mode"])
    classes = fields["classes"].split()
    payload = data[end + 5:]
    if len(payload) != len(classes) * config.k * 4:
        raise CheckpointError(
            f"units payload is {len(payload)} bytes, expected {len(classes) * config.k * 4}")
    vectors = np.frombuffer(payload, dtype="<f4").astype(DTYPE).reshape(len(classes), config.k)
    units = [RepresentationUnit(c, v.copy()) for c, v in zip(classes, vectors)]
    autoencoders = [load_checkpoint(out_dir / f"ae_{c}.ckpt")[0] for c in classes]
    return RauModel(config, autoencoders, units)
