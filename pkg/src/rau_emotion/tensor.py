"""Dense float32 kernels shared by every network in the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 in C (row-major)
order. Shapes are explicit: none of the kernels here broadcast.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32

ACTIVATIONS = ("relu", "sigmoid", "tanh")


class DimensionError(ValueError):
    """Raised when tensor shapes do not agree with what a kernel needs."""


def as_tensor(values, shape=None):
    """Return ``values`` as a contiguous float32 array, optionally reshaped."""
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if any(d < 1 for d in shape):
            raise DimensionError(f"all dimensions must be >= 1, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(
                f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    return arr


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _check_conv(x_shape, filters_shape, bias_shape):
    c, h, w = x_shape[-3:]
    if len(filters_shape) != 4:
        raise DimensionError(
            f"filters must be [f, c, fh, fw], got {filters_shape}")
    f, fc, fh, fw = filters_shape
    if fc != c:
        raise DimensionError(
            f"filter channels {fc} do not match input channels {c} "
            f"(input {x_shape}, filters {filters_shape})")
    if fh > h or fw > w:
        raise DimensionError(
            f"kernel {fh}x{fw} larger than input {h}x{w}")
    if bias_shape != (f,):
        raise DimensionError(f"bias must have shape ({f},), got {bias_shape}")


def im2col(x, fh, fw):
    """Unfold ``[n,c,h,w]`` into columns ``[c*fh*fw, n*oh*ow]``.

    Row ``(ch*fh + i)*fw + j`` holds input pixel ``(ch, y+i, x+j)`` for every
    output position ``(n, y, x)``.
    """
    n, c, h, w = x.shape
    oh, ow = h - fh + 1, w - fw + 1
    cols = np.empty((c, fh, fw, n, oh, ow), dtype=DTYPE)
    xt = x.transpose(1, 0, 2, 3)
    for i in range(fh):
        for j in range(fw):
            cols[:, i, j] = xt[:, :, i:i + oh, j:j + ow]
    return cols.reshape(c * fh * fw, n * oh * ow)


def col2im(cols, x_shape, fh, fw):
    """Adjoint of :func:`im2col`: sum columns back into a ``[n,c,h,w]`` array."""
    n, c, h, w = x_shape
    oh, ow = h - fh + 1, w - fw + 1
    cols = cols.reshape(c, fh, fw, n, oh, ow)
    out = np.zeros((c, n, h, w), dtype=DTYPE)
    for i in range(fh):
        for j in range(fw):
            out[:, :, i:i + oh, j:j + ow] += cols[:, i, j]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_valid_batch(x, filters, bias, cols=None):
    """Batched valid cross-correlation: ``[n,c,h,w] -> [n,f,h-fh+1,w-fw+1]``.

    ``cols`` may pass a precomputed :func:`im2col` of ``x``.
    """
    x = np.asarray(x, dtype=DTYPE)
    filters = np.asarray(filters, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if x.ndim != 4:
        raise DimensionError(f"expected [n,c,h,w] input, got {x.shape}")
    _check_conv(x.shape, filters.shape, bias.shape)
    n, _, h, w = x.shape
    f, _, fh, fw = filters.shape
    if cols is None:
        cols = im2col(x, fh, fw)
    out = filters.reshape(f, -1) @ cols
    out += bias[:, None]
    out = out.reshape(f, n, h - fh + 1, w - fw + 1)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_valid(x, filters, bias):
    """Valid 2-D cross-correlation of one ``[c,h,w]`` input (no kernel flip)."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3:
        raise DimensionError(f"expected [c,h,w] input, got {x.shape}")
    return conv2d_valid_batch(x[None], filters, bias)[0]


def conv2d_backward_batch(x, filters, grad_out, cols=None, need_input=True):
    """Gradients of :func:`conv2d_valid_batch` w.r.t. input, filters and bias.

    ``x`` may be just the input shape when ``cols`` is given. Returns
    ``(grad_x or None, grad_filters, grad_bias)``.
    """
    f, c, fh, fw = filters.shape
    x_shape = tuple(x.shape) if hasattr(x, "shape") else tuple(x)
    if cols is None:
        cols = im2col(x, fh, fw)
    g = grad_out.transpose(1, 0, 2, 3).reshape(f, -1)
    grad_filters = (g @ cols.T).reshape(filters.shape)
    grad_bias = g.sum(axis=1)
    grad_x = None
    if need_input:
        grad_x = col2im(filters.reshape(f, -1).T @ g, x_shape, fh, fw)
    return grad_x, grad_filters, grad_bias


def _pool_out(h, w, window, stride):
    if window < 1 or stride < 1:
        raise DimensionError("window and stride must be >= 1")
    if window > h or window > w:
        raise DimensionError(f"pool window {window} larger than input {h}x{w}")
    if window == stride and (h % stride or w % stride):
        raise DimensionError(
            f"input {h}x{w} is not divisible by pool stride {stride}")
    return (h - window) // stride + 1, (w - window) // stride + 1


def maxpool2_batch(x, window=2, stride=2):
    """Batched max-pooling. Returns pooled ``[n,c,h',w']`` and flat argmax.

    The argmax array holds, for each output element, the row-major index of
    the winning input pixel within its ``h*w`` plane.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise DimensionError(f"expected [n,c,h,w] input, got {x.shape}")
    n, c, h, w = x.shape
    oh, ow = _pool_out(h, w, window, stride)
    if window == stride:
        flat = (x.reshape(n, c, oh, window, ow, window)
                .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, window * window))
    else:
        windows = sliding_window_view(x, (window, window), axis=(2, 3))
        windows = windows[:, :, ::stride, ::stride][:, :, :oh, :ow]
        flat = windows.reshape(n, c, oh, ow, window * window)
    local = flat.argmax(axis=-1)
    pooled = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + local // window
    cols = np.arange(ow)[None, :] * stride + local % window
    return np.ascontiguousarray(pooled), rows * w + cols


def maxpool2(x, window=2, stride=2):
    """Max-pool a single ``[c,h,w]`` tensor; see :func:`maxpool2_batch`."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3:
        raise DimensionError(f"expected [c,h,w] input, got {x.shape}")
    pooled, idx = maxpool2_batch(x[None], window, stride)
    return pooled[0], idx[0]


def maxpool2_scatter(values, argmax, input_shape):
    """Route pooled values back to their argmax positions (zeros elsewhere)."""
    *lead, h, w = input_shape
    m = int(np.prod(lead, dtype=np.int64))
    out = np.zeros((m, h * w), dtype=DTYPE)
    idx = argmax.reshape(m, -1)
    vals = values.reshape(m, -1).astype(DTYPE, copy=False)
    if len(np.unique(idx[0])) == idx.shape[1]:
        np.put_along_axis(out, idx, vals, axis=1)
    else:
        # Overlapping windows can share a winner, so accumulate.
        np.add.at(out, (np.arange(m)[:, None], idx), vals)
    return out.reshape(input_shape)


def activate(x, kind):
    x = np.asarray(x, dtype=DTYPE)
    if kind == "relu":
        return np.maximum(x, DTYPE(0))
    if kind == "sigmoid":
        # Split by sign so exp never overflows.
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activate_grad(output, grad, kind):
    """Backpropagate ``grad`` through an activation given its forward output."""
    if kind == "relu":
        return grad * (output > 0)
    if kind == "sigmoid":
        return grad * output * (1 - output)
    if kind == "tanh":
        return grad * (1 - output * output)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax(x):
    """Softmax along the last axis with max subtraction."""
    x = np.asarray(x, dtype=DTYPE)
    if x.size == 0 or x.shape[-1] < 1:
        raise DimensionError("softmax needs at least one element")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("softmax input contains non-finite values")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_grad(output, grad):
    """Vector-Jacobian product of softmax along the last axis."""
    inner = (grad * output).sum(axis=-1, keepdims=True)
    return output * (grad - inner)
