import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv_loops, matmul_loops, maxpool_loops, tanh_series
from rau_emotion import tensor as T
from rau_emotion.tensor import DimensionError


def test_as_tensor_checks_shape():
    assert T.as_tensor(range(6), [2, 3]).shape == (2, 3)
    with pytest.raises(DimensionError):
        T.as_tensor(range(6), [4, 2])
    with pytest.raises(DimensionError):
        T.as_tensor([], [0])


def test_matmul_identity_and_zero():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(T.matmul(np.eye(2), x), x)
    np.testing.assert_array_equal(T.matmul([[1, 2], [3, 4]], [[0], [0]]), [[0], [0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_matches_loops():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 4)).astype(np.float32)
    b = rng.standard_normal((4, 3)).astype(np.float32)
    np.testing.assert_allclose(T.matmul(a, b), matmul_loops(a, b), atol=1e-6)


def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((1, 3, 3)).astype(np.float32)
    out = T.conv2d_valid(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_conv_zero_input_gives_bias():
    filters = np.random.default_rng(0).standard_normal((3, 2, 2, 2))
    out = T.conv2d_valid(np.zeros((2, 5, 5)), filters, np.array([1.5, -2, 0]))
    assert out.shape == (3, 4, 4)
    for plane, b in zip(out, [1.5, -2, 0]):
        assert np.all(plane == np.float32(b))


def test_conv_matches_loops():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 6, 6)).astype(np.float32)
    w = rng.standard_normal((2, 1, 3, 3)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    np.testing.assert_allclose(T.conv2d_valid(x, w, b), conv_loops(x, w, b), atol=1e-5)


def test_conv_is_not_flipped():
    x = np.zeros((1, 3, 3), dtype=np.float32)
    x[0, 0, 0] = 1
    w = np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2)
    # only the window at (0, 0) sees the impulse, through weight [0, 0]
    assert T.conv2d_valid(x, w, [0])[0, 0, 0] == 0.0


@pytest.mark.parametrize("x_shape, w_shape", [
    ((2, 5, 5), (1, 3, 3, 3)),   # channel mismatch
    ((1, 3, 3), (1, 1, 4, 4)),   # kernel larger than input
])
def test_conv_dimension_errors(x_shape, w_shape):
    with pytest.raises(DimensionError):
        T.conv2d_valid(np.zeros(x_shape), np.zeros(w_shape), np.zeros(w_shape[0]))


def test_maxpool_hand_example():
    x = np.arange(1, 17, dtype=np.float32).reshape(1, 4, 4)
    out, idx = T.maxpool2(x, 2, 2)
    np.testing.assert_array_equal(out, [[[6, 8], [14, 16]]])
    np.testing.assert_array_equal(idx, [[[5, 7], [13, 15]]])


def test_maxpool_constant():
    out, _ = T.maxpool2(np.full((2, 4, 6), 3.25), 2, 2)
    assert out.shape == (2, 2, 3) and np.all(out == 3.25)


def test_maxpool_rejects_indivisible():
    with pytest.raises(DimensionError):
        T.maxpool2(np.zeros((1, 5, 4)), 2, 2)


def test_maxpool_matches_loops():
    x = np.random.default_rng(3).standard_normal((3, 8, 8)).astype(np.float32)
    out, _ = T.maxpool2(x, 2, 2)
    np.testing.assert_array_equal(out, maxpool_loops(x, 2, 2))


def test_maxpool_overlapping_windows():
    x = np.random.default_rng(4).standard_normal((2, 7, 7)).astype(np.float32)
    out, idx = T.maxpool2(x, 3, 2)
    np.testing.assert_array_equal(out, maxpool_loops(x, 3, 2))
    np.testing.assert_array_equal(x.reshape(2, -1)[np.arange(2)[:, None], idx.reshape(2, -1)],
                                  out.reshape(2, -1))


@given(arrays(np.float32, (2, 6, 4), elements=st.floats(-100, 100, width=32)))
def test_maxpool_scatter_reconstructs_maxima(x):
    pooled, idx = T.maxpool2(x, 2, 2)
    scattered = T.maxpool2_scatter(pooled[None], idx[None], (1, *x.shape))[0]
    again, _ = T.maxpool2(np.where(scattered != 0, scattered, -np.inf).astype(np.float32), 2, 2)
    # every pooled value sits at a position holding exactly that value
    flat = x.reshape(2, -1)
    np.testing.assert_array_equal(np.take_along_axis(flat, idx.reshape(2, -1), 1),
                                  pooled.reshape(2, -1))
    nonzero = pooled != 0
    np.testing.assert_array_equal(again[nonzero], pooled[nonzero])


def test_activations_basic():
    np.testing.assert_array_equal(T.activate([-1, 0, 2], "relu"), [0, 0, 2])
    assert T.activate([0.0], "sigmoid")[0] == 0.5
    big = T.activate([-1000.0, 1000.0], "sigmoid")
    np.testing.assert_array_equal(big, [0.0, 1.0])
    with pytest.raises(ValueError):
        T.activate([1.0], "gelu")


def test_tanh_matches_series():
    x = np.random.default_rng(5).uniform(-4, 4, 50).astype(np.float32)
    ref = np.array([tanh_series(float(v)) for v in x])
    np.testing.assert_allclose(T.activate(x, "tanh"), ref, atol=1e-6)


def test_softmax_cases():
    np.testing.assert_allclose(T.softmax(np.zeros(7)), np.full(7, 1 / 7), atol=1e-7)
    out = T.softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1) and out[1] == pytest.approx(0)
    x = np.random.default_rng(6).uniform(-2, 2, 5)
    direct = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(T.softmax(x), direct, atol=1e-6)
    with pytest.raises(FloatingPointError):
        T.softmax([np.nan, 1.0])


@settings(max_examples=100)
@given(arrays(np.float32, st.integers(1, 12), elements=st.floats(-50, 50, width=32)),
       st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(x, c):
    p = T.softmax(x)
    assert abs(float(p.sum()) - 1) <= 1e-6
    np.testing.assert_allclose(T.softmax(x + np.float32(c)), p, atol=1e-6)


def test_kernels_agree_with_loops_on_100_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        c, h, w = rng.integers(1, 3), rng.integers(3, 7), rng.integers(3, 7)
        f, k = rng.integers(1, 3), rng.integers(1, 4)
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        wt = rng.standard_normal((f, c, k, k)).astype(np.float32)
        b = rng.standard_normal(f).astype(np.float32)
        np.testing.assert_allclose(T.conv2d_valid(x, wt, b), conv_loops(x, wt, b), atol=1e-5)
        m, kk, n = rng.integers(1, 6, size=3)
        a = rng.standard_normal((m, kk)).astype(np.float32)
        bb = rng.standard_normal((kk, n)).astype(np.float32)
        np.testing.assert_allclose(T.matmul(a, bb), matmul_loops(a, bb), atol=1e-5)


def test_kernels_are_deterministic():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 2, 10, 10)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    a = T.conv2d_valid_batch(x, w, np.zeros(3))
    b = T.conv2d_valid_batch(x, w, np.zeros(3))
    assert a.tobytes() == b.tobytes()


def test_conv_backward_is_adjoint_of_forward():
    # <conv(x), g> == <x, grad_x(g)> for the linear part (bias 0)
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 3, 7, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 2)).astype(np.float32)
    g = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
    y = T.conv2d_valid_batch(x, w, np.zeros(4))
    gx, gw, gb = T.conv2d_backward_batch(x, w, g)
    assert float((y * g).sum()) == pytest.approx(float((x * gx).sum()), rel=1e-4)
    assert float((y * g).sum()) == pytest.approx(float((w * gw).sum()), rel=1e-4)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-5)
