"""Two-part checkpoint files: a text header followed by raw float32 data.

Layout::

    rau-emotion-checkpoint 1
    input_shape 1 48 48
    seed 0
    epochs 100
    meta <key> <value>          (zero or more, values without newlines)
    layer <kind> [key=value ...] (one per layer, in order)
    tensor <layer> weight|bias <dim> ...
    payload_offset <10-digit byte offset>

The payload starts at ``payload_offset`` (the byte right after the header)
and holds every tensor listed in the header, in header order (layer order,
weight before bias), as little-endian float32 in row-major order. The file
must end exactly where the last tensor ends.
"""

import os

import numpy as np

from .layers import LayerSpec, ModelSpec, ModelState, param_shapes

MAGIC = "rau-emotion-checkpoint 1"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    """The checkpoint file is corrupt or inconsistent with its header."""


def dumps(model, meta=None):
    lines = [MAGIC,
             "input_shape " + " ".join(map(str, model.spec.input_shape)),
             f"seed {model.spec.seed}",
             f"epochs {model.epochs}"]
    for key, value in (meta or {}).items():
        value = str(value)
        if " " in key or "\n" in value or "\n" in key:
            raise ValueError(f"meta entry {key!r} cannot be stored in the header")
        lines.append(f"meta {key} {value}")
    lines.extend("layer " + layer.describe() for layer in model.spec.layers)
    for i, name, arr in model.tensors():
        lines.append(f"tensor {i} {name} " + " ".join(map(str, arr.shape)))
    head = "\n".join(lines) + "\n"
    offset = len(head.encode()) + len("payload_offset 0000000000\n")
    header = (head + f"payload_offset {offset:010d}\n").encode()
    payload = b"".join(arr.astype(_LE_F32).tobytes(order="C")
                       for _, _, arr in model.tensors())
    return header + payload


def save_checkpoint(model, path, meta=None):
    data = dumps(model, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def loads(data):
    """Parse checkpoint bytes. Returns ``(ModelState, meta)``."""
    marker = b"payload_offset "
    pos = data.find(marker)
    if not data.startswith(MAGIC.encode()) or pos < 0:
        raise CheckpointError("not a rau-emotion checkpoint (bad header)")
    end = data.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("header is truncated")
    try:
        offset = int(data[pos + len(marker):end])
        lines = data[:pos].decode().splitlines()[1:]
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if offset != end + 1:
        raise CheckpointError(f"payload offset {offset} does not follow the header")

    input_shape, seed, epochs = None, 0, 0
    meta, layers, tensors = {}, [], []
    try:
        for line in lines:
            key, _, rest = line.partition(" ")
            if key == "input_shape":
                input_shape = tuple(int(v) for v in rest.split())
            elif key == "seed":
                seed = int(rest)
            elif key == "epochs":
                epochs = int(rest)
            elif key == "meta":
                mkey, _, mval = rest.partition(" ")
                meta[mkey] = mval
            elif key == "layer":
                layers.append(LayerSpec.parse(rest))
            elif key == "tensor":
                idx, name, *dims = rest.split()
                tensors.append((int(idx), name, tuple(int(d) for d in dims)))
            else:
                raise CheckpointError(f"unknown header line {line!r}")
        spec = ModelSpec(tuple(layers), input_shape, seed)
        expected = param_shapes(spec)
    except CheckpointError:
        raise
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None

    declared = [(i, name, shape) for i, p in enumerate(expected) for name, shape in p.items()]
    if [(i, n) for i, n, _ in declared] != [(i, n) for i, n, _ in tensors]:
        raise CheckpointError("tensor list does not match the layer specification")
    params = [{} for _ in layers]
    cursor = offset
    for (i, name, shape), (_, _, listed) in zip(declared, tensors):
        if tuple(listed) != tuple(shape):
            raise CheckpointError(
                f"layer {i} {name}: header shape {listed} does not match spec shape {shape}")
        nbytes = int(np.prod(shape)) * 4
        if cursor + nbytes > len(data):
            raise CheckpointError(
                f"payload truncated in layer {i} ({layers[i].kind}) {name}: "
                f"needs {nbytes} bytes at offset {cursor}, file has {len(data)}")
        arr = np.frombuffer(data, dtype=_LE_F32, count=nbytes // 4, offset=cursor)
        params[i][name] = arr.astype(np.float32).reshape(shape)
        cursor += nbytes
    if cursor != len(data):
        raise CheckpointError(
            f"payload has {len(data) - cursor} trailing bytes after the last tensor")
    return ModelState(spec, params, epochs=epochs), meta


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
