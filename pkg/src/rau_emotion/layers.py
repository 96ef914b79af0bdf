"""Layer specs, forward/backward passes, losses and SGD with momentum.

A network is described by a :class:`ModelSpec` (an ordered tuple of
:class:`LayerSpec`) and its learnable tensors live in a :class:`ModelState`.
Everything runs on batches: inputs of shape ``spec.input_shape`` are treated
as a batch of one.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DTYPE, DimensionError

LAYER_KINDS = ("dense", "conv", "maxpool", "activation", "flatten", "softmax")


class BuildError(ValueError):
    """The layer list does not form a valid network."""


class TapeError(RuntimeError):
    """Backward was called without a usable forward tape."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    filters: int = 0
    kernel: int = 0
    window: int = 2
    stride: int = 2
    activation: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BuildError(f"unknown layer kind {self.kind!r}")

    def describe(self):
        if self.kind == "dense":
            return f"dense units={self.units}"
        if self.kind == "conv":
            return f"conv filters={self.filters} kernel={self.kernel}"
        if self.kind == "maxpool":
            return f"maxpool window={self.window} stride={self.stride}"
        if self.kind == "activation":
            return f"activation kind={self.activation}"
        return self.kind

    @classmethod
    def parse(cls, text):
        kind, *pairs = text.split()
        kw = {}
        for pair in pairs:
            key, _, value = pair.partition("=")
            if key == "kind":
                kw["activation"] = value
            else:
                kw[key] = int(value)
        return cls(kind, **kw)


def dense(units):
    return LayerSpec("dense", units=units)


def conv(filters, kernel):
    return LayerSpec("conv", filters=filters, kernel=kernel)


def maxpool(window=2, stride=None):
    return LayerSpec("maxpool", window=window, stride=window if stride is None else stride)


def activation(kind):
    if kind not in T.ACTIVATIONS:
        raise BuildError(f"unknown activation {kind!r}")
    return LayerSpec("activation", activation=kind)


def flatten():
    return LayerSpec("flatten")


def softmax():
    return LayerSpec("softmax")


def _layer_output_shape(layer, in_shape):
    """Output shape of ``layer`` for ``in_shape``, or an error string."""
    if layer.kind == "dense":
        if len(in_shape) != 1:
            return f"dense needs a 1-D input, got {in_shape}"
        if layer.units < 1:
            return "dense units must be >= 1"
        return (layer.units,)
    if layer.kind == "conv":
        if len(in_shape) != 3:
            return f"conv needs a [c,h,w] input, got {in_shape}"
        c, h, w = in_shape
        if layer.filters < 1 or layer.kernel < 1:
            return "conv filters and kernel must be >= 1"
        if layer.kernel > h or layer.kernel > w:
            return f"kernel {layer.kernel} larger than input {h}x{w}"
        return (layer.filters, h - layer.kernel + 1, w - layer.kernel + 1)
    if layer.kind == "maxpool":
        if len(in_shape) != 3:
            return f"maxpool needs a [c,h,w] input, got {in_shape}"
        c, h, w = in_shape
        try:
            oh, ow = T._pool_out(h, w, layer.window, layer.stride)
        except DimensionError as exc:
            return str(exc)
        return (c, oh, ow)
    if layer.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if layer.kind == "softmax" and len(in_shape) != 1:
        return f"softmax needs a 1-D input, got {in_shape}"
    return tuple(in_shape)


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))

    def shapes(self):
        """Input shape followed by the output shape of every layer."""
        if not self.layers:
            raise BuildError("model needs at least one layer")
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            raise BuildError(f"invalid input shape {self.input_shape}")
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            out = _layer_output_shape(layer, shapes[-1])
            if isinstance(out, str):
                prev = f"layer {i - 1} ({self.layers[i - 1].kind})" if i else "the input"
                raise BuildError(
                    f"layer {i} ({layer.describe()}) cannot follow {prev} "
                    f"with shape {shapes[-1]}: {out}")
            shapes.append(out)
        return shapes

    @property
    def output_shape(self):
        return self.shapes()[-1]


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class ModelState:
    spec: ModelSpec
    params: list
    epochs: int = 0
    loss_history: list = field(default_factory=list)
    version: int = 0

    def copy(self):
        return ModelState(self.spec, [{k: v.copy() for k, v in p.items()} for p in self.params],
                          self.epochs, list(self.loss_history), self.version)

    def tensors(self):
        """``(layer_index, name, array)`` for every parameter, weights before biases."""
        for i, p in enumerate(self.params):
            for name in ("weight", "bias"):
                if name in p:
                    yield i, name, p[name]


def param_shapes(spec):
    """Weight and bias shapes per layer, derived from the spec alone."""
    shapes = spec.shapes()
    out = []
    for layer, in_shape in zip(spec.layers, shapes):
        if layer.kind == "dense":
            out.append({"weight": (layer.units, in_shape[0]), "bias": (layer.units,)})
        elif layer.kind == "conv":
            out.append({"weight": (layer.filters, in_shape[0], layer.kernel, layer.kernel),
                        "bias": (layer.filters,)})
        else:
            out.append({})
    return out


def build_model(spec):
    """Glorot-uniform weights drawn in layer order from ``spec.seed``; zero biases."""
    rng = np.random.default_rng(spec.seed)
    params = []
    for shapes in param_shapes(spec):
        if not shapes:
            params.append({})
            continue
        w_shape = shapes["weight"]
        receptive = int(np.prod(w_shape[2:], dtype=np.int64))
        fan_in, fan_out = w_shape[1] * receptive, w_shape[0] * receptive
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.random(w_shape, dtype=DTYPE)
        w *= DTYPE(2 * bound)
        w -= DTYPE(bound)
        params.append({"weight": w, "bias": np.zeros(shapes["bias"], dtype=DTYPE)})
    return ModelState(spec, params)


@dataclass
class Tape:
    model_id: int
    version: int
    batched: bool
    caches: list


def _as_batch(spec, x):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape == spec.input_shape:
        return x[None], False
    if x.shape[1:] == spec.input_shape:
        return x, True
    raise DimensionError(
        f"input shape {x.shape} does not match model input {spec.input_shape}")


def forward(model, x, record=False, upto=None):
    """Run the network. Returns ``(output, tape)``; tape is None unless ``record``.

    ``upto`` stops after that many layers (used to read hidden activations).
    """
    x, batched = _as_batch(model.spec, x)
    layers = model.spec.layers[:upto]
    caches = []
    for layer, p in zip(layers, model.params):
        cache = None
        if layer.kind == "dense":
            cache = x
            x = x @ p["weight"].T
            x += p["bias"]
        elif layer.kind == "conv":
            cols = T.im2col(x, layer.kernel, layer.kernel)
            cache = (x.shape, cols)
            x = T.conv2d_valid_batch(x, p["weight"], p["bias"], cols=cols)
        elif layer.kind == "maxpool":
            in_shape = x.shape
            x, idx = T.maxpool2_batch(x, layer.window, layer.stride)
            cache = (in_shape, idx)
        elif layer.kind == "activation":
            x = T.activate(x, layer.activation)
            cache = x
        elif layer.kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "softmax":
            x = T.softmax(x)
            cache = x
        if record:
            caches.append(cache)
    tape = Tape(id(model), model.version, batched, caches) if record else None
    return (x if batched else x[0]), tape


def backward(model, tape, loss_grad, from_logits=False):
    """Gradients of every parameter given the gradient w.r.t. the model output.

    With ``from_logits`` and a final softmax layer, ``loss_grad`` is taken as
    the gradient w.r.t. the softmax input (as returned by
    :func:`cross_entropy_loss`) and the softmax Jacobian is skipped.
    """
    if tape is None or not isinstance(tape, Tape):
        raise TapeError("backward needs a tape from forward(..., record=True)")
    if tape.model_id != id(model) or tape.version != model.version:
        raise TapeError("tape is stale: the model changed since the forward pass")
    layers = model.spec.layers
    if len(tape.caches) != len(layers):
        raise TapeError("tape was recorded for a partial forward pass")
    g = np.asarray(loss_grad, dtype=DTYPE)
    if not tape.batched:
        g = g[None]
    grads = [{} for _ in layers]
    stop = len(layers)
    if from_logits:
        if layers[-1].kind != "softmax":
            raise TapeError("from_logits requires a final softmax layer")
        stop -= 1
    for i in range(stop - 1, -1, -1):
        layer, p, cache = layers[i], model.params[i], tape.caches[i]
        if layer.kind == "dense":
            grads[i] = {"weight": g.T @ cache, "bias": g.sum(axis=0)}
            if i:
                g = g @ p["weight"]
        elif layer.kind == "conv":
            x_shape, cols = cache
            g, gw, gb = T.conv2d_backward_batch(x_shape, p["weight"], g, cols=cols,
                                                need_input=i > 0)
            grads[i] = {"weight": gw, "bias": gb}
        elif layer.kind == "maxpool":
            in_shape, idx = cache
            g = T.maxpool2_scatter(g, idx, in_shape)
        elif layer.kind == "activation":
            g = T.activate_grad(cache, g, layer.activation)
        elif layer.kind == "flatten":
            g = g.reshape(cache)
        elif layer.kind == "softmax":
            g = T.softmax_grad(cache, g)
    return grads


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient ``2(pred-target)/n``."""
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff


def cross_entropy_loss(probs, target):
    """Cross-entropy of softmax outputs.

    Accepts a single ``[n]`` probability vector with an integer class, or a
    ``[b, n]`` batch with an integer array. The value is averaged over the
    batch; the gradient is w.r.t. the softmax *input*: ``(p - onehot) / b``.
    """
    probs = np.asarray(probs, dtype=DTYPE)
    single = probs.ndim == 1
    p = probs[None] if single else probs
    t = np.atleast_1d(np.asarray(target))
    n_classes = p.shape[1]
    if t.shape != (p.shape[0],) or not np.issubdtype(t.dtype, np.integer):
        raise DimensionError("one integer target per probability vector is required")
    if np.any((t < 0) | (t >= n_classes)):
        raise ValueError(f"target class out of range [0, {n_classes})")
    rows = np.arange(p.shape[0])
    picked = p[rows, t].astype(np.float64)
    value = float(np.mean(-np.log(np.maximum(picked, np.finfo(np.float64).tiny))))
    grad = p.copy()
    grad[rows, t] -= 1
    grad /= p.shape[0]
    return value, (grad[0] if single else grad)


def sgd_step(model, grads, cfg, velocity=None):
    """One momentum step, in place: ``v = momentum*v - lr*g; w = w + v``.

    Returns ``(model, velocity)``.
    """
    if len(grads) != len(model.params):
        raise DimensionError("gradient list does not match model layers")
    if velocity is None:
        velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
    lr, mu = DTYPE(cfg.learning_rate), DTYPE(cfg.momentum)
    for p, g, v in zip(model.params, grads, velocity):
        for name, w in p.items():
            if g[name].shape != w.shape:
                raise DimensionError(
                    f"gradient {name} shape {g[name].shape} != weight {w.shape}")
            vel = v[name]
            vel *= mu
            vel -= lr * g[name]
            w += vel
    model.version += 1
    return model, velocity


def train_epochs(model, dataset, cfg, epochs, loss_kind="mse", rng_seed=0):
    """Minibatch SGD for ``epochs`` passes over ``dataset``.

    ``dataset`` is ``(inputs, targets)``; for ``loss_kind="mse"`` a missing
    target means reconstruct the input. Shuffling uses only ``rng_seed``.
    Returns ``(model, per-epoch mean losses)``.
    """
    inputs, targets = dataset
    inputs = np.asarray(inputs, dtype=DTYPE)
    if inputs.shape == model.spec.input_shape:
        inputs = inputs[None]
        if targets is not None:
            targets = np.asarray(targets)[None]
    n = len(inputs)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if loss_kind not in ("mse", "cross_entropy"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if targets is None:
        if loss_kind != "mse":
            raise ValueError("cross-entropy training needs class targets")
        targets = inputs
    rng = np.random.default_rng(rng_seed)
    velocity = None
    history = []
    bs = cfg.batch_size
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            out, tape = forward(model, inputs[idx], record=True)
            if loss_kind == "mse":
                value, grad = mse_loss(out, targets[idx])
                grads = backward(model, tape, grad)
            else:
                value, grad = cross_entropy_loss(out, targets[idx])
                grads = backward(model, tape, grad, from_logits=True)
            model, velocity = sgd_step(model, grads, cfg, velocity)
            total += value * len(idx)
        history.append(total / n)
        model.epochs += 1
    model.loss_history.extend(history)
    return model, history
