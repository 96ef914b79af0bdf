"""
Kernels and backpropagation
===========================

A valid convolution, a max-pool and a tiny network, checked against
central differences.
"""

import numpy as np

from rau_emotion import layers as L
from rau_emotion.tensor import conv2d_valid, maxpool2

rng = np.random.default_rng(0)

# a 3x3 edge filter over a 6x6 image shrinks it to 4x4 (no kernel flip)
img = np.zeros((1, 6, 6), np.float32)
img[:, :, 3:] = 1
edge = np.array([[[[-1, 0, 1]] * 3]], np.float32)
print(conv2d_valid(img, edge, [0.0])[0])

# 2x2 pooling keeps the max of each window and remembers where it was
pooled, where = maxpool2(np.arange(16, dtype=np.float32).reshape(1, 4, 4))
print(pooled[0], where[0], sep="\n")

# a dense -> relu -> dense net and its gradient
spec = L.ModelSpec([L.dense(4), L.activation("relu"), L.dense(3)], (5,), seed=1)
net = L.build_model(spec)
x = rng.standard_normal(5).astype(np.float32)
target = np.array([0.0, 1.0, 0.0], np.float32)

out, tape = L.forward(net, x, record=True)
loss, g = L.mse_loss(out, target)
grads = L.backward(net, tape, g)

w = net.params[2]["weight"]
eps = 1e-3
w[0, 0] += eps
up = L.mse_loss(L.forward(net, x)[0], target)[0]
w[0, 0] -= 2 * eps
down = L.mse_loss(L.forward(net, x)[0], target)[0]
w[0, 0] += eps
print("analytic", grads[2]["weight"][0, 0], "numeric", (up - down) / (2 * eps))

# a few SGD steps lower the loss
cfg = L.OptimizerConfig(learning_rate=0.1, momentum=0.9, batch_size=1)
_, history = L.train_epochs(net, (x[None], target[None]), cfg, 20)
print("loss", round(history[0], 4), "->", round(history[-1], 6))
